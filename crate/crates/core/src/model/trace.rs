//! Per-sequence forward outputs and the `ATTN` / `HIDN` export formats.
//!
//! `ATTN`: magic, little-endian `u32` L, H, T, then `L·H·T·T` `f32` weights
//! row-major (zeros above the diagonal written out). `HIDN`: magic, `u32`
//! L+1, T, D, then `(L+1)·T·D` `f32` values. A file may hold several records
//! back to back, one per sequence.

use std::path::Path;

use super::config::BosMode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Attention weights `A[l][h][i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor<T> {
    pub layers: usize,
    pub heads: usize,
    pub len: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> AttentionTensor<T> {
    pub fn new(layers: usize, heads: usize, len: usize, data: Vec<T>) -> Result<Self> {
        let expected = layers * heads * len * len;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            layers,
            heads,
            len,
            data,
        })
    }

    /// Full row `i` (length `len`) of head `h` in layer `l`.
    pub fn row(&self, l: usize, h: usize, i: usize) -> &[T] {
        let t = self.len;
        let start = ((l * self.heads + h) * t + i) * t;
        &self.data[start..start + t]
    }

    pub fn head(&self, l: usize, h: usize) -> &[T] {
        let t = self.len;
        let start = (l * self.heads + h) * t * t;
        &self.data[start..start + t * t]
    }

    pub fn to_f32(&self) -> AttentionTensor<f32> {
        AttentionTensor {
            layers: self.layers,
            heads: self.heads,
            len: self.len,
            data: self.data.iter().map(|x| x.narrow()).collect(),
        }
    }
}

/// Hidden states `H[l][i][:]` for `l = 0..=L` (0 is the embedding output).
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTensor<T> {
    pub layers: usize,
    pub len: usize,
    pub dim: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> HiddenTensor<T> {
    pub fn new(layers: usize, len: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        let expected = layers * len * dim;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            layers,
            len,
            dim,
            data,
        })
    }

    /// `[len, dim]` states of layer `l`.
    pub fn layer(&self, l: usize) -> &[T] {
        let n = self.len * self.dim;
        &self.data[l * n..(l + 1) * n]
    }

    pub fn to_f32(&self) -> HiddenTensor<f32> {
        HiddenTensor {
            layers: self.layers,
            len: self.len,
            dim: self.dim,
            data: self.data.iter().map(|x| x.narrow()).collect(),
        }
    }
}

/// Everything one forward pass exposes for analysis.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub vocab_size: usize,
    pub bos_mode: BosMode,
    /// `[len, vocab]`, before BOS masking.
    pub logits: Vec<T>,
    /// Log-normalizer of each row's (masked) softmax.
    pub log_norm: Vec<T>,
    pub attention: AttentionTensor<T>,
    pub hidden: HiddenTensor<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn len(&self) -> usize {
        self.log_norm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_norm.is_empty()
    }

    pub fn log_prob(&self, i: usize, token: u32) -> T {
        if token == 0 && self.bos_mode == BosMode::SoftmaxMask {
            return T::neg_infinity();
        }
        self.logits[i * self.vocab_size + token as usize] - self.log_norm[i]
    }

    /// Next-token distribution at row `i`.
    pub fn probs(&self, i: usize) -> Vec<T> {
        (0..self.vocab_size as u32)
            .map(|tok| self.log_prob(i, tok).exp())
            .collect()
    }

    /// Mean NLL (nats/token) of `targets`, where `targets[i]` is the token
    /// predicted at row `i` (the input shifted left by one).
    pub fn loss(&self, targets: &[u32]) -> Result<f64> {
        if targets.is_empty() || targets.len() > self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len().saturating_sub(1),
                got: targets.len(),
            });
        }
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(i, &tok)| -self.log_prob(i, tok).f64())
            .sum();
        Ok(total / targets.len() as f64)
    }
}

const ATTN_MAGIC: &[u8; 4] = b"ATTN";
const HIDN_MAGIC: &[u8; 4] = b"HIDN";

fn push_header(out: &mut Vec<u8>, magic: &[u8; 4], dims: [usize; 3]) {
    out.extend_from_slice(magic);
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

fn push_f32s<T: Scalar>(out: &mut Vec<u8>, data: &[T]) {
    for x in data {
        out.extend_from_slice(&x.narrow().to_le_bytes());
    }
}

/// Splits `bytes` into records of `magic` + three dims + payload.
fn parse_records(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<Vec<([usize; 3], Vec<f32>)>> {
    let mut out = Vec::new();
    let mut at = 0;
    if bytes.is_empty() {
        return Err(Error::corrupt(path, "empty tensor file"));
    }
    while at < bytes.len() {
        if bytes.len() < at + 16 || &bytes[at..at + 4] != magic {
            return Err(Error::corrupt(path, format!("missing {} header", String::from_utf8_lossy(magic))));
        }
        let dim = |k: usize| u32::from_le_bytes(bytes[at + 4 + 4 * k..at + 8 + 4 * k].try_into().unwrap()) as usize;
        let dims = [dim(0), dim(1), dim(2)];
        let count = if magic == ATTN_MAGIC {
            dims[0] * dims[1] * dims[2] * dims[2]
        } else {
            dims[0] * dims[1] * dims[2]
        };
        let start = at + 16;
        let end = start + count * 4;
        if bytes.len() < end {
            return Err(Error::corrupt(path, "truncated tensor payload"));
        }
        let data = bytes[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((dims, data));
        at = end;
    }
    Ok(out)
}

pub fn attention_to_bytes<T: Scalar>(tensors: &[AttentionTensor<T>]) -> Vec<u8> {
    let mut out = Vec::new();
    for a in tensors {
        push_header(&mut out, ATTN_MAGIC, [a.layers, a.heads, a.len]);
        push_f32s(&mut out, &a.data);
    }
    out
}

pub fn hidden_to_bytes<T: Scalar>(tensors: &[HiddenTensor<T>]) -> Vec<u8> {
    let mut out = Vec::new();
    for h in tensors {
        push_header(&mut out, HIDN_MAGIC, [h.layers, h.len, h.dim]);
        push_f32s(&mut out, &h.data);
    }
    out
}

pub fn write_attention<T: Scalar>(path: &Path, tensors: &[AttentionTensor<T>]) -> Result<()> {
    std::fs::write(path, attention_to_bytes(tensors)).map_err(Error::io(path))
}

pub fn write_hidden<T: Scalar>(path: &Path, tensors: &[HiddenTensor<T>]) -> Result<()> {
    std::fs::write(path, hidden_to_bytes(tensors)).map_err(Error::io(path))
}

pub fn read_attention(path: &Path) -> Result<Vec<AttentionTensor<f32>>> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    parse_records(&bytes, ATTN_MAGIC, path)?
        .into_iter()
        .map(|([l, h, t], data)| AttentionTensor::new(l, h, t, data))
        .collect()
}

pub fn read_hidden(path: &Path) -> Result<Vec<HiddenTensor<f32>>> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    parse_records(&bytes, HIDN_MAGIC, path)?
        .into_iter()
        .map(|([l, t, d], data)| HiddenTensor::new(l, t, d, data))
        .collect()
}
