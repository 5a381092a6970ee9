use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use super::TabularDistribution;
use crate::error::{Error, Result};
use crate::hash::Hasher;
use crate::scalar::Scalar;

/// Order-`k` Markov chain over `vocab_size` symbols.
///
/// `transition` holds one row of `vocab_size` next-symbol probabilities per
/// k-gram context, contexts indexed row-major with the oldest symbol most
/// significant. `initial` is a distribution over the first `k` symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSource<T> {
    order: usize,
    vocab_size: usize,
    transition: Vec<T>,
    initial: Vec<T>,
}

fn row_tolerance<T: Scalar>() -> f64 {
    (T::epsilon().f64() * 256.0).max(1e-12)
}

impl<T: Scalar> MarkovSource<T> {
    pub fn new(order: usize, vocab_size: usize, transition: Vec<T>, initial: Vec<T>) -> Result<Self> {
        if order == 0 || vocab_size == 0 {
            return Err(Error::invalid("Markov order and vocabulary must be positive"));
        }
        let contexts = vocab_size
            .checked_pow(order as u32)
            .ok_or_else(|| Error::invalid("Markov context table too large"))?;
        if transition.len() != contexts * vocab_size {
            return Err(Error::LengthMismatch {
                expected: contexts * vocab_size,
                got: transition.len(),
            });
        }
        if initial.len() != contexts {
            return Err(Error::LengthMismatch {
                expected: contexts,
                got: initial.len(),
            });
        }
        let tol = row_tolerance::<T>();
        let check = |row: &[T], what: &str| -> Result<()> {
            if row.iter().any(|p| !p.is_finite() || *p < T::zero()) {
                return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().map(|p| p.f64()).sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::invalid(format!("{what} sums to {s}, not 1")));
            }
            Ok(())
        };
        for (c, row) in transition.chunks(vocab_size).enumerate() {
            check(row, &format!("transition row {c}"))?;
        }
        check(&initial, "initial distribution")?;
        Ok(Self {
            order,
            vocab_size,
            transition,
            initial,
        })
    }

    /// Rows drawn from a symmetric Dirichlet with the given concentration;
    /// small concentrations give peaked, low-entropy transitions. The initial
    /// distribution is uniform over contexts.
    pub fn random(order: usize, vocab_size: usize, concentration: f64, seed: u64) -> Result<Self> {
        if !(concentration > 0.0) {
            return Err(Error::invalid("Dirichlet concentration must be positive"));
        }
        let contexts = vocab_size
            .checked_pow(order as u32)
            .ok_or_else(|| Error::invalid("Markov context table too large"))?;
        let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut transition = Vec::with_capacity(contexts * vocab_size);
        for _ in 0..contexts {
            let mut row: Vec<f64> = (0..vocab_size)
                .map(|_| gamma.sample(&mut rng).max(1e-300))
                .collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
            transition.extend(row.into_iter().map(T::of));
        }
        let initial = vec![T::of(1.0 / contexts as f64); contexts];
        Self::new(order, vocab_size, transition, initial)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn transition_row(&self, context: &[u32]) -> &[T] {
        let c = self.context_index(context);
        &self.transition[c * self.vocab_size..(c + 1) * self.vocab_size]
    }

    fn context_index(&self, context: &[u32]) -> usize {
        context
            .iter()
            .fold(0usize, |acc, &s| acc * self.vocab_size + s as usize)
    }

    fn draw(row: &[T], u: f64) -> u32 {
        let mut acc = 0.0;
        for (i, p) in row.iter().enumerate() {
            acc += p.f64();
            if u < acc {
                return i as u32;
            }
        }
        // u landed in the rounding gap above the last cumulative value
        row.iter().rposition(|p| *p > T::zero()).unwrap_or(row.len() - 1) as u32
    }

    fn extend_with(&self, out: &mut Vec<u32>, length: usize, rng: &mut ChaCha8Rng) {
        let start = out.len();
        let first = Self::draw(&self.initial, rng.random::<f64>()) as usize;
        let mut ctx = vec![0u32; self.order];
        let mut rem = first;
        for slot in ctx.iter_mut().rev() {
            *slot = (rem % self.vocab_size) as u32;
            rem /= self.vocab_size;
        }
        out.extend(ctx.iter().take(length));
        while out.len() - start < length {
            let context = &out[out.len() - self.order..];
            let next = Self::draw(self.transition_row(context), rng.random::<f64>());
            out.push(next);
        }
    }

    /// `count` independent sequences of `length` symbols.
    pub fn sample_sequences(&self, count: usize, length: usize, seed: u64) -> Result<Vec<Vec<u32>>> {
        if length < self.order {
            return Err(Error::invalid(format!(
                "sequence length {length} shorter than Markov order {}",
                self.order
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|_| {
                let mut s = Vec::with_capacity(length);
                self.extend_with(&mut s, length, &mut rng);
                s
            })
            .collect())
    }

    /// One continuous stream of `length` symbols.
    pub fn sample_stream(&self, length: usize, seed: u64) -> Result<Vec<u32>> {
        Ok(self
            .sample_sequences(1, length.max(self.order), seed)?
            .pop()
            .unwrap_or_default()
            .into_iter()
            .take(length)
            .collect())
    }

    /// Exact log-probability of a sequence of at least `order` symbols.
    pub fn log_prob(&self, seq: &[u32]) -> Result<T> {
        if seq.len() < self.order {
            return Err(Error::invalid("sequence shorter than Markov order"));
        }
        if let Some(&bad) = seq.iter().find(|&&s| s as usize >= self.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id: bad as u64,
                vocab: self.vocab_size,
            });
        }
        let mut lp = self.initial[self.context_index(&seq[..self.order])].ln();
        for t in self.order..seq.len() {
            let p = self.transition_row(&seq[t - self.order..t])[seq[t] as usize];
            lp += p.ln();
        }
        Ok(lp)
    }

    /// The joint distribution over sequences of length `n`, enumerated.
    pub fn to_tabular(&self, n: usize) -> Result<TabularDistribution<T>> {
        if n < self.order {
            return Err(Error::invalid("tabular length shorter than Markov order"));
        }
        let len = super::table_len(self.vocab_size, n, super::DEFAULT_MAX_ENTRIES)?;
        let mut probs = Vec::with_capacity(len);
        let mut seq = vec![0u32; n];
        for idx in 0..len {
            let mut rem = idx;
            for slot in seq.iter_mut().rev() {
                *slot = (rem % self.vocab_size) as u32;
                rem /= self.vocab_size;
            }
            probs.push(self.log_prob(&seq)?.exp());
        }
        TabularDistribution::normalize(&probs, self.vocab_size, n)
    }

    /// Content hash of the parameters, used as corpus provenance.
    pub fn provenance_hash(&self) -> String {
        let mut h = Hasher::new();
        h.update(b"markov-v1");
        h.update(&(self.order as u64).to_le_bytes());
        h.update(&(self.vocab_size as u64).to_le_bytes());
        for p in self.transition.iter().chain(&self.initial) {
            h.update(&p.f64().to_le_bytes());
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_chain_is_forced() {
        // 0 -> 1 -> 2 -> 0 deterministically, always starting at 0.
        let transition = vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let src = MarkovSource::<f64>::new(1, 3, transition, vec![1.0, 0.0, 0.0]).unwrap();
        let seqs = src.sample_sequences(3, 7, 5).unwrap();
        for s in seqs {
            assert_eq!(s, vec![0, 1, 2, 0, 1, 2, 0]);
        }
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let src = MarkovSource::<f64>::random(2, 5, 0.5, 3).unwrap();
        assert_eq!(
            src.sample_sequences(4, 20, 11).unwrap(),
            src.sample_sequences(4, 20, 11).unwrap()
        );
        assert_ne!(
            src.sample_sequences(4, 20, 11).unwrap(),
            src.sample_sequences(4, 20, 12).unwrap()
        );
        assert!(src.sample_sequences(1, 1, 0).is_err());
    }

    #[test]
    fn empirical_bigrams_match_table() {
        let src = MarkovSource::<f64>::random(1, 3, 1.0, 8).unwrap();
        let seqs = src.sample_sequences(100_000, 2, 99).unwrap();
        let mut counts = [[0usize; 3]; 3];
        for s in &seqs {
            counts[s[0] as usize][s[1] as usize] += 1;
        }
        for (a, row) in counts.iter().enumerate() {
            let total: usize = row.iter().sum();
            for (b, &c) in row.iter().enumerate() {
                let freq = c as f64 / total as f64;
                let p = src.transition_row(&[a as u32])[b];
                assert!((freq - p).abs() < 0.01, "P({b}|{a}) = {p}, observed {freq}");
            }
        }
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(MarkovSource::<f64>::new(1, 2, vec![0.5, 0.6, 0.5, 0.5], vec![0.5, 0.5]).is_err());
        assert!(MarkovSource::<f64>::new(1, 2, vec![1.5, -0.5, 0.5, 0.5], vec![0.5, 0.5]).is_err());
        assert!(MarkovSource::<f64>::new(1, 2, vec![0.5, 0.5], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn tabular_matches_log_prob() {
        let src = MarkovSource::<f64>::random(2, 3, 0.7, 2).unwrap();
        let tab = src.to_tabular(4).unwrap();
        let total: f64 = tab.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let seq = [2u32, 0, 1, 1];
        let idx = tab.index_of(&seq).unwrap();
        assert!((tab.probs()[idx].ln() - src.log_prob(&seq).unwrap()).abs() < 1e-12);
    }
}
