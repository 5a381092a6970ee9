use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.numel()
    }

    /// Matrices take weight decay; vectors (biases, norm gains) do not.
    pub fn decays(&self) -> bool {
        self.shape.len() >= 2
    }
}

/// Offsets of one transformer block's tensors inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub qkv_w: usize,
    pub qkv_b: usize,
    pub proj_w: usize,
    pub proj_b: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub fc_w: usize,
    pub fc_b: usize,
    pub mp_w: usize,
    pub mp_b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Offsets {
    pub wte: usize,
    pub wpe: usize,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub head: usize,
}

/// Names, shapes and offsets of every tensor; fully determined by the config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, v, w) = (cfg.dim, cfg.vocab_size, cfg.window);
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let numel: usize = shape.iter().product();
            tensors.push(TensorSpec {
                name,
                shape,
                offset: total,
            });
            total += numel;
        };
        push("wte".into(), vec![v, d]);
        push("wpe".into(), vec![w, d]);
        for l in 0..cfg.layers {
            push(format!("h{l}.ln1.g"), vec![d]);
            push(format!("h{l}.ln1.b"), vec![d]);
            push(format!("h{l}.attn.qkv.w"), vec![d, 3 * d]);
            push(format!("h{l}.attn.qkv.b"), vec![3 * d]);
            push(format!("h{l}.attn.proj.w"), vec![d, d]);
            push(format!("h{l}.attn.proj.b"), vec![d]);
            push(format!("h{l}.ln2.g"), vec![d]);
            push(format!("h{l}.ln2.b"), vec![d]);
            push(format!("h{l}.mlp.fc.w"), vec![d, 4 * d]);
            push(format!("h{l}.mlp.fc.b"), vec![4 * d]);
            push(format!("h{l}.mlp.proj.w"), vec![4 * d, d]);
            push(format!("h{l}.mlp.proj.b"), vec![d]);
        }
        push("lnf.g".into(), vec![d]);
        push("lnf.b".into(), vec![d]);
        push("head.w".into(), vec![d, v]);
        Self { tensors, total }
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn offset(&self, name: &str) -> usize {
        self.get(name).expect("layout tensor").offset
    }

    pub(crate) fn block(&self, l: usize) -> BlockOffsets {
        let o = |s: &str| self.offset(&format!("h{l}.{s}"));
        BlockOffsets {
            ln1_g: o("ln1.g"),
            ln1_b: o("ln1.b"),
            qkv_w: o("attn.qkv.w"),
            qkv_b: o("attn.qkv.b"),
            proj_w: o("attn.proj.w"),
            proj_b: o("attn.proj.b"),
            ln2_g: o("ln2.g"),
            ln2_b: o("ln2.b"),
            fc_w: o("mlp.fc.w"),
            fc_b: o("mlp.fc.b"),
            mp_w: o("mlp.proj.w"),
            mp_b: o("mlp.proj.b"),
        }
    }

    pub(crate) fn offsets(&self) -> Offsets {
        Offsets {
            wte: self.offset("wte"),
            wpe: self.offset("wpe"),
            lnf_g: self.offset("lnf.g"),
            lnf_b: self.offset("lnf.b"),
            head: self.offset("head.w"),
        }
    }
}

/// Flat parameter (or gradient) storage in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub(crate) layout: ParamLayout,
    pub(crate) data: Vec<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(layout: ParamLayout) -> Self {
        let data = vec![T::zero(); layout.total()];
        Self { layout, data }
    }

    /// Matrices ~ N(0, init_std²) drawn in layout order from a generator
    /// seeded with `cfg.seed`; biases 0, norm gains 1.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut p = Self::zeros(ParamLayout::new(cfg));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, cfg.init_std).map_err(|e| Error::invalid(e.to_string()))?;
        for spec in p.layout.tensors.clone() {
            let slot = &mut p.data[spec.range()];
            if spec.decays() {
                for x in slot.iter_mut() {
                    *x = T::of(normal.sample(&mut rng));
                }
            } else if spec.name.ends_with(".g") {
                slot.fill(T::one());
            }
        }
        Ok(p)
    }

    pub fn from_vec(layout: ParamLayout, data: Vec<T>) -> Result<Self> {
        if data.len() != layout.total() {
            return Err(Error::LengthMismatch {
                expected: layout.total(),
                got: data.len(),
            });
        }
        Ok(Self { layout, data })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.get(name).map(|s| &self.data[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.data[range])
    }

    pub fn iter_named(&self) -> impl Iterator<Item = (&TensorSpec, &[T])> {
        self.layout.tensors.iter().map(|s| (s, &self.data[s.range()]))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x.f64() * x.f64()).sum::<f64>().sqrt()
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| U::of(x.f64())).collect(),
        }
    }
}
