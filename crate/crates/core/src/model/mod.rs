//! Miniature decoder-only transformer with exact manual gradients.
//!
//! Pre-norm blocks (causal multi-head attention, GELU MLP with 4× expansion),
//! learned absolute position embeddings and an untied output projection. The
//! BOS token (id 0) is masked out of every next-token softmax by default.

mod checkpoint;
mod config;
mod kernels;
mod net;
mod optim;
mod params;
mod trace;
mod train;

pub use checkpoint::{MANIFEST_FILE, WEIGHTS_FILE};
pub use config::{BosMode, ModelConfig};
pub use optim::{AdamW, LrSchedule};
pub use params::{ParamLayout, Params, TensorSpec};
pub use trace::{
    attention_to_bytes, hidden_to_bytes, read_attention, read_hidden, write_attention,
    write_hidden, AttentionTensor, ForwardTrace, HiddenTensor,
};
pub use train::{train, Hyper, LogEntry, TrainLog, TrainOutcome};

use net::{Net, Workspace};

use crate::error::{Error, Result};
use crate::ordering::Permutation;
use crate::scalar::Scalar;
use crate::tokenize::PackedSequence;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrainMeta {
    pub step: usize,
    /// Ordering label (`forward`, `backward`, `fixed:<seed>`, or `init`).
    pub ordering: String,
    pub tokenizer_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
    pub meta: TrainMeta,
}

impl<T: Scalar> Checkpoint<T> {
    /// Seeded initialization; equal configs give identical weights.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        Ok(Self {
            params: Params::init(config)?,
            config: config.clone(),
            meta: TrainMeta {
                step: 0,
                ordering: "init".into(),
                tokenizer_hash: String::new(),
                seed: config.seed,
            },
        })
    }

    fn net(&self) -> Net<'_, T> {
        Net::new(&self.config, self.params.layout(), self.params.as_slice())
    }

    /// Forward pass over one BOS-first token window (length 2..=W).
    pub fn forward(&self, tokens: &[u32]) -> Result<ForwardTrace<T>> {
        let net = self.net();
        let mut ws = Workspace::default();
        net.forward(tokens, &mut ws)?;
        let (l, h, t) = (self.config.layers, self.config.heads, tokens.len());
        let mut att = Vec::with_capacity(l * h * t * t);
        for layer in 0..l {
            for head in 0..h {
                att.extend_from_slice(net.attention(&ws, layer, head));
            }
        }
        let hidden: Vec<T> = ws.x.iter().flatten().copied().collect();
        Ok(ForwardTrace {
            vocab_size: self.config.vocab_size,
            bos_mode: self.config.bos_mode,
            logits: ws.logits,
            log_norm: ws.lse,
            attention: AttentionTensor::new(l, h, t, att)?,
            hidden: HiddenTensor::new(l + 1, t, self.config.dim, hidden)?,
        })
    }

    pub fn forward_batch(&self, batch: &[PackedSequence]) -> Result<Vec<ForwardTrace<T>>> {
        batch.iter().map(|s| self.forward(s.tokens())).collect()
    }

    /// Mean NLL of each window, without building traces.
    pub fn mean_nll_many<'s>(&self, windows: impl IntoIterator<Item = &'s [u32]>) -> Result<Vec<f64>> {
        let net = self.net();
        let mut ws = Workspace::default();
        windows
            .into_iter()
            .map(|w| {
                net.forward(w, &mut ws)?;
                Ok(net.mean_nll(&ws, w))
            })
            .collect()
    }

    pub fn mean_nll(&self, window: &[u32]) -> Result<f64> {
        Ok(self.mean_nll_many([window])?[0])
    }

    /// Mean NLL after reordering a full BOS-prefixed window with `ordering`.
    pub fn mean_nll_ordered(&self, window: &[u32], ordering: &Permutation) -> Result<f64> {
        self.mean_nll(&ordering.apply_to_window(window)?)
    }

    /// Gradient of the batch-mean loss with respect to every parameter,
    /// returned with the loss itself. Sequences are accumulated in order.
    pub fn gradients(&self, batch: &[&[u32]]) -> Result<(f64, Params<T>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let net = self.net();
        let mut ws = Workspace::default();
        let mut grad = Params::zeros(self.params.layout().clone());
        let scale = T::of(1.0 / batch.len() as f64);
        let mut loss = 0.0;
        for tokens in batch {
            net.forward(tokens, &mut ws)?;
            loss += net.mean_nll(&ws, tokens);
            net.backward(tokens, &mut ws, grad.as_mut_slice(), scale);
        }
        if let Some(bad) = non_finite_tensor(&grad) {
            return Err(Error::NonFiniteGradient(bad));
        }
        Ok((loss / batch.len() as f64, grad))
    }

    /// Loss alone; used by finite-difference checks.
    pub fn batch_loss(&self, batch: &[&[u32]]) -> Result<f64> {
        let nll = self.mean_nll_many(batch.iter().copied())?;
        Ok(nll.iter().sum::<f64>() / nll.len() as f64)
    }

    pub fn cast<U: Scalar>(&self) -> Checkpoint<U> {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.cast(),
            meta: self.meta.clone(),
        }
    }
}

pub(crate) fn non_finite_tensor<T: Scalar>(p: &Params<T>) -> Option<String> {
    p.iter_named()
        .find(|(_, data)| data.iter().any(|x| !x.is_finite()))
        .map(|(spec, _)| spec.name.clone())
}
