//! Pre-norm GPT-style decoder: forward pass with activation caches and the
//! matching hand-derived backward pass.

use super::config::{BosMode, ModelConfig};
use super::kernels::{
    dot, gelu, gemm, gelu_backward, layernorm, layernorm_backward, matmul, matmul_backward,
};
use super::params::{BlockOffsets, Offsets, ParamLayout};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Default)]
struct NormCache<T> {
    out: Vec<T>,
    xhat: Vec<T>,
    rstd: Vec<T>,
}

impl<T: Scalar> NormCache<T> {
    fn resize(&mut self, rows: usize, dim: usize) {
        self.out.resize(rows * dim, T::zero());
        self.xhat.resize(rows * dim, T::zero());
        self.rstd.resize(rows, T::zero());
    }
}

#[derive(Debug, Clone, Default)]
struct BlockCache<T> {
    ln1: NormCache<T>,
    qkv: Vec<T>,
    /// `[heads, t, t]`, zero above the diagonal.
    att: Vec<T>,
    attn_out: Vec<T>,
    x_mid: Vec<T>,
    ln2: NormCache<T>,
    fc: Vec<T>,
    act: Vec<T>,
    kt: Vec<T>,
}

/// Activations of one sequence plus scratch space for its backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct Workspace<T> {
    pub(crate) len: usize,
    /// Residual stream entering block `l`; `x[layers]` is the final state.
    pub(crate) x: Vec<Vec<T>>,
    blocks: Vec<BlockCache<T>>,
    lnf: NormCache<T>,
    pub(crate) logits: Vec<T>,
    /// Per-row log of the softmax normalizer (after masking).
    pub(crate) lse: Vec<T>,
    dx: Vec<T>,
    dnorm: Vec<T>,
    dattn: Vec<T>,
    dqkv: Vec<T>,
    dact: Vec<T>,
    dfc: Vec<T>,
    dlogits: Vec<T>,
    datt: Vec<T>,
    vt: Vec<T>,
}

pub(crate) struct Net<'a, T> {
    pub cfg: &'a ModelConfig,
    pub params: &'a [T],
    /// Every matrix `[k, n]` stored transposed as `[n, k]` at its own offset.
    wt: Vec<T>,
    off: Offsets,
    blocks: Vec<BlockOffsets>,
}

impl<'a, T: Scalar> Net<'a, T> {
    pub fn new(cfg: &'a ModelConfig, layout: &ParamLayout, params: &'a [T]) -> Self {
        let mut wt = vec![T::zero(); params.len()];
        for spec in layout.tensors().iter().filter(|s| s.shape.len() == 2) {
            let (k, n) = (spec.shape[0], spec.shape[1]);
            let (src, dst) = (&params[spec.range()], &mut wt[spec.range()]);
            for kk in 0..k {
                for j in 0..n {
                    dst[j * k + kk] = src[kk * n + j];
                }
            }
        }
        Self {
            cfg,
            params,
            wt,
            off: layout.offsets(),
            blocks: (0..cfg.layers).map(|l| layout.block(l)).collect(),
        }
    }

    fn p(&self, offset: usize, len: usize) -> &'a [T] {
        &self.params[offset..offset + len]
    }

    fn pt(&self, offset: usize, len: usize) -> &[T] {
        &self.wt[offset..offset + len]
    }

    pub fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.len() < 2 || tokens.len() > self.cfg.window {
            return Err(Error::invalid(format!(
                "sequence length {} outside 2..={}",
                tokens.len(),
                self.cfg.window
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id: bad as u64,
                vocab: self.cfg.vocab_size,
            });
        }
        Ok(())
    }

    fn prepare(&self, ws: &mut Workspace<T>, t: usize) {
        let (d, h, v, layers) = (self.cfg.dim, self.cfg.heads, self.cfg.vocab_size, self.cfg.layers);
        ws.len = t;
        ws.x.resize_with(layers + 1, Vec::new);
        for x in &mut ws.x {
            x.resize(t * d, T::zero());
        }
        ws.blocks.resize_with(layers, BlockCache::default);
        for b in &mut ws.blocks {
            b.ln1.resize(t, d);
            b.qkv.resize(t * 3 * d, T::zero());
            b.att.resize(h * t * t, T::zero());
            b.attn_out.resize(t * d, T::zero());
            b.x_mid.resize(t * d, T::zero());
            b.ln2.resize(t, d);
            b.fc.resize(t * 4 * d, T::zero());
            b.act.resize(t * 4 * d, T::zero());
        }
        ws.lnf.resize(t, d);
        ws.logits.resize(t * v, T::zero());
        ws.lse.resize(t, T::zero());
    }

    /// Runs the model over `tokens` (BOS first), filling `ws`.
    pub fn forward(&self, tokens: &[u32], ws: &mut Workspace<T>) -> Result<()> {
        self.check_tokens(tokens)?;
        let t = tokens.len();
        let (d, v) = (self.cfg.dim, self.cfg.vocab_size);
        self.prepare(ws, t);

        let wte = self.p(self.off.wte, v * d);
        let wpe = self.p(self.off.wpe, self.cfg.window * d);
        for (i, &tok) in tokens.iter().enumerate() {
            let row = &mut ws.x[0][i * d..(i + 1) * d];
            let e = &wte[tok as usize * d..(tok as usize + 1) * d];
            let pe = &wpe[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] = e[j] + pe[j];
            }
        }
        if !all_finite(&ws.x[0]) {
            return Err(Error::NonFinite { layer: 0 });
        }

        for l in 0..self.cfg.layers {
            let (before, after) = ws.x.split_at_mut(l + 1);
            self.block_forward(l, &before[l], &mut after[0], &mut ws.blocks[l], t);
            if !all_finite(&after[0]) {
                return Err(Error::NonFinite { layer: l + 1 });
            }
        }

        let x = &ws.x[self.cfg.layers];
        layernorm(
            &mut ws.lnf.out,
            &mut ws.lnf.xhat,
            &mut ws.lnf.rstd,
            x,
            self.p(self.off.lnf_g, d),
            self.p(self.off.lnf_b, d),
            d,
        );
        matmul(
            &mut ws.logits,
            &ws.lnf.out,
            self.p(self.off.head, d * v),
            None,
            t,
            d,
            v,
        );
        let mask = self.cfg.bos_mode == BosMode::SoftmaxMask;
        for i in 0..t {
            let row = &ws.logits[i * v..(i + 1) * v];
            let allowed = if mask { &row[1..] } else { row };
            let max = allowed.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = allowed.iter().map(|&z| (z - max).exp()).sum();
            ws.lse[i] = max + sum.ln();
        }
        if !all_finite(&ws.logits) || !all_finite(&ws.lse) {
            return Err(Error::NonFinite {
                layer: self.cfg.layers + 1,
            });
        }
        Ok(())
    }

    fn block_forward(&self, l: usize, x_in: &[T], x_out: &mut [T], c: &mut BlockCache<T>, t: usize) {
        let d = self.cfg.dim;
        let o = self.blocks[l];
        layernorm(
            &mut c.ln1.out,
            &mut c.ln1.xhat,
            &mut c.ln1.rstd,
            x_in,
            self.p(o.ln1_g, d),
            self.p(o.ln1_b, d),
            d,
        );
        matmul(
            &mut c.qkv,
            &c.ln1.out,
            self.p(o.qkv_w, d * 3 * d),
            Some(self.p(o.qkv_b, 3 * d)),
            t,
            d,
            3 * d,
        );
        self.attention_forward(c, t);
        // x_mid = x_in + attn_out · W_proj + b_proj
        matmul(
            &mut c.x_mid,
            &c.attn_out,
            self.p(o.proj_w, d * d),
            Some(self.p(o.proj_b, d)),
            t,
            d,
            d,
        );
        for (m, &xi) in c.x_mid.iter_mut().zip(x_in) {
            *m += xi;
        }
        layernorm(
            &mut c.ln2.out,
            &mut c.ln2.xhat,
            &mut c.ln2.rstd,
            &c.x_mid,
            self.p(o.ln2_g, d),
            self.p(o.ln2_b, d),
            d,
        );
        matmul(
            &mut c.fc,
            &c.ln2.out,
            self.p(o.fc_w, d * 4 * d),
            Some(self.p(o.fc_b, 4 * d)),
            t,
            d,
            4 * d,
        );
        gelu(&mut c.act, &c.fc);
        matmul(
            x_out,
            &c.act,
            self.p(o.mp_w, 4 * d * d),
            Some(self.p(o.mp_b, d)),
            t,
            4 * d,
            d,
        );
        for (xo, &m) in x_out.iter_mut().zip(&c.x_mid) {
            *xo += m;
        }
    }

    fn attention_forward(&self, c: &mut BlockCache<T>, t: usize) {
        let (d, heads, hd) = (self.cfg.dim, self.cfg.heads, self.cfg.head_dim());
        let scale = T::of(1.0 / (hd as f64).sqrt());
        c.attn_out.fill(T::zero());
        c.kt.resize(hd * t, T::zero());
        for h in 0..heads {
            for j in 0..t {
                for e in 0..hd {
                    c.kt[e * t + j] = c.qkv[j * 3 * d + d + h * hd + e];
                }
            }
            let att = &mut c.att[h * t * t..(h + 1) * t * t];
            att.fill(T::zero());
            gemm(att, t, &c.qkv[h * hd..], 3 * d, 1, &c.kt, t, t, hd, t);
            for i in 0..t {
                let row = &mut att[i * t..(i + 1) * t];
                let mut max = T::neg_infinity();
                for s in &mut row[..=i] {
                    *s *= scale;
                    max = max.max(*s);
                }
                let mut sum = T::zero();
                for a in &mut row[..=i] {
                    *a = (*a - max).exp();
                    sum += *a;
                }
                let inv = T::one() / sum;
                for a in &mut row[..=i] {
                    *a *= inv;
                }
                row[i + 1..].fill(T::zero());
            }
            gemm(&mut c.attn_out[h * hd..], d, att, t, 1, &c.qkv[2 * d + h * hd..], 3 * d, t, t, hd);
        }
    }

    /// Log-probability of `token` at row `i` from a completed forward pass.
    pub fn log_prob(&self, ws: &Workspace<T>, i: usize, token: u32) -> T {
        let v = self.cfg.vocab_size;
        if token == 0 && self.cfg.bos_mode == BosMode::SoftmaxMask {
            return T::neg_infinity();
        }
        ws.logits[i * v + token as usize] - ws.lse[i]
    }

    /// Mean next-token NLL over the `t - 1` real-token predictions.
    pub fn mean_nll(&self, ws: &Workspace<T>, tokens: &[u32]) -> f64 {
        let n = tokens.len() - 1;
        let total: f64 = (0..n).map(|i| -self.log_prob(ws, i, tokens[i + 1]).f64()).sum();
        total / n as f64
    }

    /// Adds `scale · ∂(mean NLL)/∂θ` for one sequence into `grad`, using the
    /// activations left in `ws` by [`Net::forward`].
    pub fn backward(&self, tokens: &[u32], ws: &mut Workspace<T>, grad: &mut [T], scale: T) {
        let t = ws.len;
        let (d, v, layers) = (self.cfg.dim, self.cfg.vocab_size, self.cfg.layers);
        let mask = self.cfg.bos_mode == BosMode::SoftmaxMask;

        ws.dlogits.resize(t * v, T::zero());
        let coef = scale / T::of((t - 1) as f64);
        for i in 0..t {
            let drow = &mut ws.dlogits[i * v..(i + 1) * v];
            if i + 1 == t {
                drow.fill(T::zero());
                continue;
            }
            let row = &ws.logits[i * v..(i + 1) * v];
            let lse = ws.lse[i];
            for (dz, &z) in drow.iter_mut().zip(row) {
                *dz = coef * (z - lse).exp();
            }
            if mask {
                drow[0] = T::zero();
            }
            drow[tokens[i + 1] as usize] -= coef;
        }

        ws.dnorm.resize(t * d, T::zero());
        ws.dx.clear();
        ws.dx.resize(t * d, T::zero());
        {
            let gw = grad_slice(grad, self.off.head, d * v);
            matmul_backward(
                Some(&mut ws.dnorm),
                gw,
                None,
                &ws.dlogits,
                &ws.lnf.out,
                self.pt(self.off.head, d * v),
                t,
                d,
                v,
            );
        }
        self.norm_backward(
            grad,
            self.off.lnf_g,
            self.off.lnf_b,
            &ws.dnorm,
            &ws.lnf,
            &mut ws.dx,
        );

        for l in (0..layers).rev() {
            self.block_backward(l, ws, grad, t);
        }

        for (i, &tok) in tokens.iter().enumerate() {
            let dxr = &ws.dx[i * d..(i + 1) * d];
            let we = self.off.wte + tok as usize * d;
            for (g, &dv) in grad[we..we + d].iter_mut().zip(dxr) {
                *g += dv;
            }
            let pe = self.off.wpe + i * d;
            for (g, &dv) in grad[pe..pe + d].iter_mut().zip(dxr) {
                *g += dv;
            }
        }
    }

    fn norm_backward(
        &self,
        grad: &mut [T],
        g_off: usize,
        b_off: usize,
        dout: &[T],
        cache: &NormCache<T>,
        dx: &mut [T],
    ) {
        let d = self.cfg.dim;
        debug_assert_eq!(b_off, g_off + d);
        let dgb = grad_slice(grad, g_off, 2 * d);
        let (dg, db) = dgb.split_at_mut(d);
        layernorm_backward(
            dx,
            dg,
            db,
            dout,
            &cache.xhat,
            &cache.rstd,
            self.p(g_off, d),
            d,
        );
    }

    fn block_backward(&self, l: usize, ws: &mut Workspace<T>, grad: &mut [T], t: usize) {
        let d = self.cfg.dim;
        let o = self.blocks[l];
        let c = &ws.blocks[l];

        // MLP branch: x_out = x_mid + act · W_mp + b_mp
        ws.dact.resize(t * 4 * d, T::zero());
        {
            let gwb = grad_slice(grad, o.mp_w, 4 * d * d + d);
            let (gw, gb) = gwb.split_at_mut(4 * d * d);
            matmul_backward(
                Some(&mut ws.dact),
                gw,
                Some(gb),
                &ws.dx,
                &c.act,
                self.pt(o.mp_w, 4 * d * d),
                t,
                4 * d,
                d,
            );
        }
        ws.dfc.resize(t * 4 * d, T::zero());
        gelu_backward(&mut ws.dfc, &ws.dact, &c.fc);
        {
            let gwb = grad_slice(grad, o.fc_w, d * 4 * d + 4 * d);
            let (gw, gb) = gwb.split_at_mut(d * 4 * d);
            matmul_backward(
                Some(&mut ws.dnorm),
                gw,
                Some(gb),
                &ws.dfc,
                &c.ln2.out,
                self.pt(o.fc_w, d * 4 * d),
                t,
                d,
                4 * d,
            );
        }
        self.norm_backward(grad, o.ln2_g, o.ln2_b, &ws.dnorm, &c.ln2, &mut ws.dx);

        // Attention branch: x_mid = x_in + attn_out · W_proj + b_proj
        ws.dattn.resize(t * d, T::zero());
        {
            let gwb = grad_slice(grad, o.proj_w, d * d + d);
            let (gw, gb) = gwb.split_at_mut(d * d);
            matmul_backward(
                Some(&mut ws.dattn),
                gw,
                Some(gb),
                &ws.dx,
                &c.attn_out,
                self.pt(o.proj_w, d * d),
                t,
                d,
                d,
            );
        }
        ws.dqkv.clear();
        ws.dqkv.resize(t * 3 * d, T::zero());
        self.attention_backward(c, &ws.dattn, &mut ws.dqkv, &mut ws.datt, &mut ws.vt, t);
        {
            let gwb = grad_slice(grad, o.qkv_w, d * 3 * d + 3 * d);
            let (gw, gb) = gwb.split_at_mut(d * 3 * d);
            matmul_backward(
                Some(&mut ws.dnorm),
                gw,
                Some(gb),
                &ws.dqkv,
                &c.ln1.out,
                self.pt(o.qkv_w, d * 3 * d),
                t,
                d,
                3 * d,
            );
        }
        self.norm_backward(grad, o.ln1_g, o.ln1_b, &ws.dnorm, &c.ln1, &mut ws.dx);
    }

    fn attention_backward(
        &self,
        c: &BlockCache<T>,
        dout: &[T],
        dqkv: &mut [T],
        datt: &mut Vec<T>,
        vt: &mut Vec<T>,
        t: usize,
    ) {
        let (d, heads, hd) = (self.cfg.dim, self.cfg.heads, self.cfg.head_dim());
        let scale = T::of(1.0 / (hd as f64).sqrt());
        datt.resize(t * t, T::zero());
        vt.resize(hd * t, T::zero());
        for h in 0..heads {
            let att = &c.att[h * t * t..(h + 1) * t * t];
            for j in 0..t {
                for e in 0..hd {
                    vt[e * t + j] = c.qkv[j * 3 * d + 2 * d + h * hd + e];
                }
            }
            datt.fill(T::zero());
            gemm(datt, t, &dout[h * hd..], d, 1, vt, t, t, hd, t);
            // dV += Aᵀ · dO
            gemm(&mut dqkv[2 * d + h * hd..], 3 * d, att, 1, t, &dout[h * hd..], d, t, t, hd);
            // Softmax backward turns dA into score gradients in place.
            for i in 0..t {
                let a = &att[i * t..(i + 1) * t];
                let ds = &mut datt[i * t..(i + 1) * t];
                let weighted = dot(&a[..=i], &ds[..=i]);
                for j in 0..=i {
                    ds[j] = a[j] * (ds[j] - weighted) * scale;
                }
                ds[i + 1..].fill(T::zero());
            }
            gemm(&mut dqkv[h * hd..], 3 * d, datt, t, 1, &c.qkv[d + h * hd..], 3 * d, t, t, hd);
            gemm(&mut dqkv[d + h * hd..], 3 * d, datt, 1, t, &c.qkv[h * hd..], 3 * d, t, t, hd);
        }
    }

    /// Attention weights of block `l` for head `h`, row-major `[t, t]`.
    pub fn attention<'w>(&self, ws: &'w Workspace<T>, l: usize, h: usize) -> &'w [T] {
        let t = ws.len;
        &ws.blocks[l].att[h * t * t..(h + 1) * t * t]
    }
}

fn grad_slice<T>(grad: &mut [T], offset: usize, len: usize) -> &mut [T] {
    &mut grad[offset..offset + len]
}

fn all_finite<T: Scalar>(xs: &[T]) -> bool {
    xs.iter().all(|x| x.is_finite())
}
