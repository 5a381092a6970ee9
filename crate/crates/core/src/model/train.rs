use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::net::{Net, Workspace};
use super::optim::{AdamW, LrSchedule};
use super::params::Params;
use super::{non_finite_tensor, Checkpoint};
use crate::error::{Error, Result};
use crate::hash::Hasher;
use crate::ordering::Permutation;
use crate::scalar::Scalar;
use crate::tokenize::{PackedDataset, Split};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub lr: f64,
    /// Sequences per micro-batch.
    pub batch_size: usize,
    /// Micro-batches summed per optimizer step.
    pub grad_accum: usize,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Record a training-loss log row every this many optimizer steps.
    pub log_every: usize,
}

impl Hyper {
    /// Desk-scale preset.
    pub fn desk() -> Self {
        Self {
            lr: 3e-4,
            batch_size: 16,
            grad_accum: 8,
            warmup_frac: 0.03,
            weight_decay: 0.001,
            epochs: 5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            log_every: 10,
        }
    }

    /// Same settings with the learning rate used at GPT-2 scale.
    pub fn gpt2_scale() -> Self {
        Self {
            lr: 2e-5,
            ..Self::desk()
        }
    }

    pub fn sequences_per_step(&self) -> usize {
        self.batch_size * self.grad_accum
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.grad_accum == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size, grad_accum and epochs must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::invalid("warmup_frac must lie in [0, 1]"));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log_every must be positive"));
        }
        Ok(())
    }
}

impl Default for Hyper {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub split: Split,
    pub nll: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
    /// Validation perplexity after each epoch (empty without a validation set).
    pub epoch_val_ppl: Vec<f64>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,split,nll,lr\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{}", e.step, e.split, e.nll, e.lr);
        }
        out
    }

    pub fn last_train_nll(&self) -> Option<f64> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.split == Split::Train)
            .map(|e| e.nll)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub log: TrainLog,
    /// Hash of the sequence indices in the order they were consumed.
    pub schedule_hash: String,
}

/// Visit order for one epoch; depends only on the seed and epoch index.
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..n as u32).collect();
    let mut h = Hasher::new();
    h.update(b"epoch-order");
    h.update(&seed.to_le_bytes());
    h.update(&(epoch as u64).to_le_bytes());
    let digest = h.finish();
    let stream = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(stream));
    idx
}

/// Trains a freshly initialized model on `dataset` with every sequence
/// reordered by `ordering`. An incomplete final step of an epoch still
/// updates, averaging over the sequences it has.
pub fn train<T: Scalar>(
    config: &ModelConfig,
    dataset: &PackedDataset,
    validation: Option<&PackedDataset>,
    ordering: &Permutation,
    hyper: &Hyper,
) -> Result<TrainOutcome<T>> {
    hyper.validate()?;
    config.validate()?;
    if dataset.window != config.window {
        return Err(Error::invalid(format!(
            "dataset window {} differs from model window {}",
            dataset.window, config.window
        )));
    }
    if dataset.vocab_size > config.vocab_size {
        return Err(Error::invalid(format!(
            "dataset vocabulary {} exceeds model vocabulary {}",
            dataset.vocab_size, config.vocab_size
        )));
    }
    if ordering.n() != config.window - 1 {
        return Err(Error::invalid(format!(
            "ordering covers {} positions, expected {}",
            ordering.n(),
            config.window - 1
        )));
    }
    if dataset.sequences.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(v) = validation {
        if v.window != config.window {
            return Err(Error::invalid("validation window differs from model window"));
        }
    }

    let mut ckpt = Checkpoint::<T>::init(config)?;
    ckpt.meta.ordering = ordering.kind().label();
    ckpt.meta.tokenizer_hash = dataset.tokenizer_hash.clone();

    let reordered: Vec<Vec<u32>> = dataset
        .sequences
        .iter()
        .map(|s| ordering.apply_to_window(s.tokens()))
        .collect::<Result<_>>()?;
    let val_reordered: Option<Vec<Vec<u32>>> = validation
        .map(|v| {
            v.sequences
                .iter()
                .map(|s| ordering.apply_to_window(s.tokens()))
                .collect::<Result<_>>()
        })
        .transpose()?;

    let n = reordered.len();
    let per_step = hyper.sequences_per_step();
    let steps_per_epoch = n.div_ceil(per_step);
    let total_steps = steps_per_epoch * hyper.epochs;
    let schedule = LrSchedule::new(hyper.lr, hyper.warmup_frac, total_steps);

    let layout = ckpt.params.layout().clone();
    let mut opt = AdamW::<T>::new(&layout, hyper.beta1, hyper.beta2, hyper.eps, hyper.weight_decay);
    let mut grad = Params::<T>::zeros(layout.clone());
    let mut ws = Workspace::default();
    let mut log = TrainLog::default();
    let mut sched_hash = Hasher::new();
    let mut step = 0usize;

    for epoch in 0..hyper.epochs {
        let order = epoch_order(n, config.seed, epoch);
        sched_hash.update_u32s(&order);
        for chunk in order.chunks(per_step) {
            grad.fill_zero();
            let scale = T::of(1.0 / chunk.len() as f64);
            let mut loss = 0.0;
            {
                let net = Net::new(&ckpt.config, &layout, ckpt.params.as_slice());
                for &i in chunk {
                    let tokens = &reordered[i as usize];
                    net.forward(tokens, &mut ws).map_err(|e| match e {
                        Error::NonFinite { .. } => Error::Divergence { step },
                        other => other,
                    })?;
                    loss += net.mean_nll(&ws, tokens);
                    net.backward(tokens, &mut ws, grad.as_mut_slice(), scale);
                }
            }
            loss /= chunk.len() as f64;
            if !loss.is_finite() || non_finite_tensor(&grad).is_some() {
                return Err(Error::Divergence { step });
            }
            let lr = schedule.lr(step);
            opt.step(ckpt.params.as_mut_slice(), grad.as_slice(), lr);
            if step.is_multiple_of(hyper.log_every) || step + 1 == total_steps {
                log.entries.push(LogEntry {
                    step,
                    split: Split::Train,
                    nll: loss,
                    lr,
                });
            }
            step += 1;
        }
        if let Some(val) = &val_reordered {
            if !val.is_empty() {
                let nll = ckpt.mean_nll_many(val.iter().map(Vec::as_slice))?;
                let mean = nll.iter().sum::<f64>() / nll.len() as f64;
                log.entries.push(LogEntry {
                    step: step - 1,
                    split: Split::Validation,
                    nll: mean,
                    lr: schedule.lr(step - 1),
                });
                log.epoch_val_ppl.push(mean.exp());
            }
        }
        log::info!("epoch {} done at step {step}", epoch + 1);
    }
    if non_finite_tensor(&ckpt.params).is_some() {
        return Err(Error::Divergence { step });
    }
    ckpt.meta.step = step;
    Ok(TrainOutcome {
        checkpoint: ckpt,
        log,
        schedule_hash: sched_hash.finish(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_order_depends_on_seed_and_epoch() {
        assert_eq!(epoch_order(50, 1, 0), epoch_order(50, 1, 0));
        assert_ne!(epoch_order(50, 1, 0), epoch_order(50, 1, 1));
        assert_ne!(epoch_order(50, 1, 0), epoch_order(50, 2, 0));
        let mut sorted = epoch_order(50, 3, 2);
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn hyper_presets() {
        assert_eq!(Hyper::desk().sequences_per_step(), 128);
        assert_eq!(Hyper::gpt2_scale().lr, 2e-5);
        assert!(Hyper { epochs: 0, ..Hyper::desk() }.validate().is_err());
    }
}
