//! Dense kernels over row-major slices. Inner loops are written as
//! independent-lane updates so they vectorize for both `f32` and `f64`.

use crate::scalar::Scalar;

pub(crate) const LN_EPS: f64 = 1e-5;
const LANES: usize = 16;

#[inline]
pub(crate) fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = a.mul_add(xi, *yi);
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); LANES];
    let chunks = n / LANES;
    for c in 0..chunks {
        let (ac, bc) = (&a[c * LANES..(c + 1) * LANES], &b[c * LANES..(c + 1) * LANES]);
        for i in 0..LANES {
            acc[i] = ac[i].mul_add(bc[i], acc[i]);
        }
    }
    let mut s = T::zero();
    for i in chunks * LANES..n {
        s += a[i] * b[i];
    }
    let mut total = T::zero();
    for v in acc {
        total += v;
    }
    total + s
}

const MR: usize = 4;
const NR: usize = 32;

/// `c[i, j] += Σ_p a(i, p) · b[p, j]` for `i < m`, `j < n`, `p < pd`, where
/// `a(i, p) = a[i·si + p·sp]`, `b[p, j] = b[p·ldb + j]` and
/// `c[i, j] = c[i·ldc + j]`. Accumulates in `MR × NR` register tiles.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    c: &mut [T],
    ldc: usize,
    a: &[T],
    si: usize,
    sp: usize,
    b: &[T],
    ldb: usize,
    m: usize,
    pd: usize,
    n: usize,
) {
    let mut i0 = 0;
    while i0 < m {
        let mr = MR.min(m - i0);
        let mut j0 = 0;
        while j0 < n {
            let nr = NR.min(n - j0);
            if mr == MR && nr == NR {
                let mut acc = [[T::zero(); NR]; MR];
                for p in 0..pd {
                    let brow: &[T; NR] = b[p * ldb + j0..p * ldb + j0 + NR].try_into().unwrap();
                    let av: [T; MR] = std::array::from_fn(|i| a[(i0 + i) * si + p * sp]);
                    for (row, &x) in acc.iter_mut().zip(&av) {
                        for j in 0..NR {
                            row[j] = x.mul_add(brow[j], row[j]);
                        }
                    }
                }
                for (i, row) in acc.iter().enumerate() {
                    let out = &mut c[(i0 + i) * ldc + j0..(i0 + i) * ldc + j0 + NR];
                    for j in 0..NR {
                        out[j] += row[j];
                    }
                }
            } else {
                for i in 0..mr {
                    let out = &mut c[(i0 + i) * ldc + j0..(i0 + i) * ldc + j0 + nr];
                    for p in 0..pd {
                        let av = a[(i0 + i) * si + p * sp];
                        axpy(out, av, &b[p * ldb + j0..p * ldb + j0 + nr]);
                    }
                }
            }
            j0 += nr;
        }
        i0 += mr;
    }
}

/// `out[r, :] = bias + inp[r, :] · w` with `w` of shape `[k, n]`.
pub(crate) fn matmul<T: Scalar>(
    out: &mut [T],
    inp: &[T],
    w: &[T],
    bias: Option<&[T]>,
    rows: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(out.len(), rows * n);
    debug_assert_eq!(inp.len(), rows * k);
    debug_assert_eq!(w.len(), k * n);
    for r in 0..rows {
        let o = &mut out[r * n..(r + 1) * n];
        match bias {
            Some(b) => o.copy_from_slice(b),
            None => o.fill(T::zero()),
        }
    }
    gemm(out, n, inp, k, 1, w, n, rows, k, n);
}

/// Backward of [`matmul`]: accumulates `dw += inpᵀ·dout`, `db += Σ dout`
/// and, when requested, writes `dinp = dout·wᵀ`. Takes `w` already
/// transposed to `[n, k]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_backward<T: Scalar>(
    dinp: Option<&mut [T]>,
    dw: &mut [T],
    db: Option<&mut [T]>,
    dout: &[T],
    inp: &[T],
    w_t: &[T],
    rows: usize,
    k: usize,
    n: usize,
) {
    if let Some(dinp) = dinp {
        dinp[..rows * k].fill(T::zero());
        gemm(dinp, k, dout, n, 1, w_t, k, rows, n, k);
    }
    gemm(dw, n, inp, 1, k, dout, n, k, rows, n);
    if let Some(db) = db {
        for r in 0..rows {
            for (b, &g) in db.iter_mut().zip(&dout[r * n..(r + 1) * n]) {
                *b += g;
            }
        }
    }
}

/// Row-wise layer norm. Stores the normalized input in `xhat` and the
/// reciprocal standard deviation in `rstd` for the backward pass.
pub(crate) fn layernorm<T: Scalar>(
    out: &mut [T],
    xhat: &mut [T],
    rstd: &mut [T],
    x: &[T],
    g: &[T],
    b: &[T],
    dim: usize,
) {
    let inv_n = T::of(1.0 / dim as f64);
    let eps = T::of(LN_EPS);
    for (r, row) in x.chunks_exact(dim).enumerate() {
        let mean = row.iter().copied().sum::<T>() * inv_n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        let xh = &mut xhat[r * dim..(r + 1) * dim];
        let o = &mut out[r * dim..(r + 1) * dim];
        for i in 0..dim {
            xh[i] = (row[i] - mean) * rs;
            o[i] = xh[i] * g[i] + b[i];
        }
    }
}

/// Accumulates `dx`, `dg`, `db` for [`layernorm`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn layernorm_backward<T: Scalar>(
    dx: &mut [T],
    dg: &mut [T],
    db: &mut [T],
    dout: &[T],
    xhat: &[T],
    rstd: &[T],
    g: &[T],
    dim: usize,
) {
    let inv_n = T::of(1.0 / dim as f64);
    for r in 0..rstd.len() {
        let d = &dout[r * dim..(r + 1) * dim];
        let xh = &xhat[r * dim..(r + 1) * dim];
        let mut mean_dxh = T::zero();
        let mut mean_dxh_xh = T::zero();
        for i in 0..dim {
            let dxh = d[i] * g[i];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[i];
            dg[i] += d[i] * xh[i];
            db[i] += d[i];
        }
        mean_dxh *= inv_n;
        mean_dxh_xh *= inv_n;
        let rs = rstd[r];
        let dxr = &mut dx[r * dim..(r + 1) * dim];
        for i in 0..dim {
            let dxh = d[i] * g[i];
            dxr[i] += rs * (dxh - mean_dxh - xh[i] * mean_dxh_xh);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub(crate) fn gelu<T: Scalar>(out: &mut [T], x: &[T]) {
    let (c, k, half) = (T::of(GELU_C), T::of(GELU_K), T::of(0.5));
    for (o, &v) in out.iter_mut().zip(x) {
        let inner = c * (v + k * v * v * v);
        *o = half * v * (T::one() + inner.gelu_tanh());
    }
}

/// `dx = dout · gelu'(x)` (overwrites `dx`).
pub(crate) fn gelu_backward<T: Scalar>(dx: &mut [T], dout: &[T], x: &[T]) {
    let (c, k, half, three) = (T::of(GELU_C), T::of(GELU_K), T::of(0.5), T::of(3.0));
    for ((d, &g), &v) in dx.iter_mut().zip(dout).zip(x) {
        let inner = c * (v + k * v * v * v);
        let th = inner.gelu_tanh();
        let sech2 = T::one() - th * th;
        let local = half * (T::one() + th) + half * v * sech2 * c * (T::one() + three * k * v * v);
        *d = g * local;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_naive() {
        let (rows, k, n) = (7, 5, 9);
        let inp: Vec<f64> = (0..rows * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let b: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
        let mut out = vec![0.0; rows * n];
        matmul(&mut out, &inp, &w, Some(&b), rows, k, n);
        for r in 0..rows {
            for j in 0..n {
                let want: f64 = b[j] + (0..k).map(|kk| inp[r * k + kk] * w[kk * n + j]).sum::<f64>();
                assert!((out[r * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tiled_products_match_naive() {
        let (rows, k, n) = (9, 6, 70);
        let inp: Vec<f64> = (0..rows * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let g: Vec<f64> = (0..rows * n).map(|i| (i as f64 * 0.23).sin()).collect();
        let mut out = vec![0.0; rows * n];
        matmul(&mut out, &inp, &w, None, rows, k, n);
        let mut dinp = vec![7.0; rows * k];
        let mut dw = vec![1.0; k * n];
        let mut db = vec![0.5; n];
        let mut w_t = vec![0.0; k * n];
        for kk in 0..k {
            for j in 0..n {
                w_t[j * k + kk] = w[kk * n + j];
            }
        }
        matmul_backward(Some(&mut dinp), &mut dw, Some(&mut db), &g, &inp, &w_t, rows, k, n);
        for r in 0..rows {
            for j in 0..n {
                let want: f64 = (0..k).map(|kk| inp[r * k + kk] * w[kk * n + j]).sum();
                assert!((out[r * n + j] - want).abs() < 1e-12);
            }
            for kk in 0..k {
                let want: f64 = (0..n).map(|j| g[r * n + j] * w[kk * n + j]).sum();
                assert!((dinp[r * k + kk] - want).abs() < 1e-12);
            }
        }
        for kk in 0..k {
            for j in 0..n {
                let want: f64 = 1.0 + (0..rows).map(|r| inp[r * k + kk] * g[r * n + j]).sum::<f64>();
                assert!((dw[kk * n + j] - want).abs() < 1e-12);
            }
        }
        for j in 0..n {
            let want: f64 = 0.5 + (0..rows).map(|r| g[r * n + j]).sum::<f64>();
            assert!((db[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn dot_handles_remainders() {
        let a: Vec<f32> = (0..19).map(|i| i as f32).collect();
        let b = vec![1.0f32; 19];
        assert_eq!(dot(&a, &b), 171.0);
    }
}
