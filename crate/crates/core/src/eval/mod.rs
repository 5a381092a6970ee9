//! Perplexity under any ordering, two-alternative forced choice, and
//! correlation of per-item difficulty across models.

mod afc;

pub use afc::{
    difficulty_correlation, parse_items, read_items, read_reference, two_afc, AfcOutcome, AfcRow,
    CorrelationMatrix, TwoAfcItem,
};

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::ordering::{PermKind, Permutation};
use crate::probcore::{MarkovSource, SequenceAssignment, TabularDistribution};
use crate::scalar::Scalar;
use crate::tokenize::{PackedDataset, BOS_ID};

/// Anything that assigns a mean negative log-likelihood to a sequence read
/// in a given order.
pub trait Scorer {
    /// Longest content (non-BOS) length the scorer accepts.
    fn max_len(&self) -> usize;

    /// Mean NLL in nats over the `content.len()` predictions when the
    /// content is factorized in `ordering`, which covers exactly
    /// `content.len()` positions.
    fn mean_nll(&self, content: &[u32], ordering: &Permutation) -> Result<f64>;
}

impl<T: Scalar> Scorer for Checkpoint<T> {
    fn max_len(&self) -> usize {
        self.config.window - 1
    }

    fn mean_nll(&self, content: &[u32], ordering: &Permutation) -> Result<f64> {
        let mut window = Vec::with_capacity(content.len() + 1);
        window.push(BOS_ID);
        window.extend_from_slice(content);
        self.mean_nll_ordered(&window, ordering)
    }
}

/// Exact chain-rule scoring; content values are the distribution's symbols.
impl<T: Scalar> Scorer for TabularDistribution<T> {
    fn max_len(&self) -> usize {
        self.seq_len()
    }

    fn mean_nll(&self, content: &[u32], ordering: &Permutation) -> Result<f64> {
        let seq = SequenceAssignment::new(content.to_vec());
        Ok(self.perplexity_via_factorization(&seq, ordering)?.f64().ln())
    }
}

/// Scores token ids (`symbol + 1`, as Markov corpora are packed) by the true
/// joint probability, which no ordering can change.
impl<T: Scalar> Scorer for MarkovSource<T> {
    fn max_len(&self) -> usize {
        usize::MAX
    }

    fn mean_nll(&self, content: &[u32], _ordering: &Permutation) -> Result<f64> {
        let symbols: Vec<u32> = content
            .iter()
            .map(|&id| {
                id.checked_sub(1).ok_or(Error::TokenOutOfRange {
                    id: id as u64,
                    vocab: self.vocab_size() + 1,
                })
            })
            .collect::<Result<_>>()?;
        Ok(-self.log_prob(&symbols)?.f64() / symbols.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerplexityRecord {
    pub id: usize,
    pub perplexity: f64,
    pub mean_nll: f64,
    pub ordering: String,
    /// Content was shorter than the scorer's window, or was cut to fit it.
    pub flagged: bool,
}

/// Ordering to use for a sequence of `len` content tokens. Forward and
/// backward adapt to any length; other orderings only apply at full length.
fn ordering_for(ordering: &Permutation, len: usize) -> Result<Permutation> {
    if ordering.n() == len {
        return Ok(ordering.clone());
    }
    match ordering.kind() {
        PermKind::Forward => Permutation::identity(len),
        PermKind::Backward => Permutation::reversal(len),
        other => Err(Error::invalid(format!(
            "ordering {other} covers {} positions and cannot score a sequence of {len}",
            ordering.n()
        ))),
    }
}

pub fn sequence_perplexity<S: Scorer + ?Sized>(
    scorer: &S,
    id: usize,
    content: &[u32],
    ordering: &Permutation,
) -> Result<PerplexityRecord> {
    if content.is_empty() {
        return Err(Error::invalid("cannot score an empty sequence"));
    }
    let max = scorer.max_len();
    let (content, cut) = if content.len() > max {
        (&content[..max], true)
    } else {
        (content, false)
    };
    let short = content.len() < max && max != usize::MAX;
    let sigma = ordering_for(ordering, content.len())?;
    let mean_nll = scorer.mean_nll(content, &sigma)?;
    if !mean_nll.is_finite() {
        return Err(Error::invalid(format!("non-finite NLL for sequence {id}")));
    }
    Ok(PerplexityRecord {
        id,
        perplexity: mean_nll.exp(),
        mean_nll,
        ordering: ordering.kind().label(),
        flagged: cut || short,
    })
}

/// Scores every sequence of `dataset` in order. The dataset must have been
/// tokenized the way the checkpoint's training data was.
pub fn eval_dataset_ppl<T: Scalar>(
    ckpt: &Checkpoint<T>,
    dataset: &PackedDataset,
    ordering: &Permutation,
) -> Result<Vec<PerplexityRecord>> {
    if dataset.tokenizer_hash != ckpt.meta.tokenizer_hash {
        return Err(Error::Provenance(format!(
            "dataset tokenizer {} does not match checkpoint tokenizer {}",
            dataset.tokenizer_hash, ckpt.meta.tokenizer_hash
        )));
    }
    dataset
        .sequences
        .iter()
        .enumerate()
        .map(|(id, s)| sequence_perplexity(ckpt, id, s.content(), ordering))
        .collect()
}

pub fn perplexities(records: &[PerplexityRecord]) -> Vec<f64> {
    records.iter().map(|r| r.perplexity).collect()
}

pub fn records_csv(records: &[PerplexityRecord]) -> String {
    let mut out = String::from("sequence_id,perplexity,mean_nll,ordering,flagged\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.id, r.perplexity, r.mean_nll, r.ordering, r.flagged
        );
    }
    out
}
