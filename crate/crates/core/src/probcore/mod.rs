//! Exact finite probability models.
//!
//! A [`TabularDistribution`] stores the full joint `P(X_1, ..., X_n)` over a
//! vocabulary of `V` symbols, so every conditional of every factorization order
//! can be computed by exhaustive summation. BOS is implicit: `P(X_0) = 1` and
//! it never occupies a table dimension.

mod io;
mod markov;

pub use io::{read_distribution, write_distribution};
pub use markov::MarkovSource;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::ordering::Permutation;
use crate::scalar::Scalar;

/// Largest table size accepted unless a caller raises the cap.
pub const DEFAULT_MAX_ENTRIES: usize = 1 << 24;

/// A full assignment `X_1..X_n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SequenceAssignment(pub Vec<u32>);

impl SequenceAssignment {
    pub fn new(values: Vec<u32>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<u32>> for SequenceAssignment {
    fn from(values: Vec<u32>) -> Self {
        Self(values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDistribution<T> {
    vocab_size: usize,
    seq_len: usize,
    probs: Vec<T>,
}

fn table_len(vocab_size: usize, seq_len: usize, cap: usize) -> Result<usize> {
    if vocab_size == 0 || seq_len == 0 {
        return Err(Error::invalid("vocabulary size and sequence length must be positive"));
    }
    let mut len = 1usize;
    for _ in 0..seq_len {
        len = len
            .checked_mul(vocab_size)
            .filter(|&l| l <= cap)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "{vocab_size}^{seq_len} entries exceed the enumeration cap {cap}"
                ))
            })?;
    }
    Ok(len)
}

impl<T: Scalar> TabularDistribution<T> {
    /// Normalizes nonnegative masses into a distribution.
    pub fn normalize(raw: &[T], vocab_size: usize, seq_len: usize) -> Result<Self> {
        Self::normalize_with_cap(raw, vocab_size, seq_len, DEFAULT_MAX_ENTRIES)
    }

    pub fn normalize_with_cap(
        raw: &[T],
        vocab_size: usize,
        seq_len: usize,
        cap: usize,
    ) -> Result<Self> {
        let len = table_len(vocab_size, seq_len, cap)?;
        if raw.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                got: raw.len(),
            });
        }
        if let Some(bad) = raw.iter().find(|x| !x.is_finite() || **x < T::zero()) {
            return Err(Error::invalid(format!("mass entry {bad} is negative or non-finite")));
        }
        let total = kahan_sum(raw.iter().copied());
        if total <= T::zero() {
            return Err(Error::AllZeroMass);
        }
        Ok(Self {
            vocab_size,
            seq_len,
            probs: raw.iter().map(|&x| x / total).collect(),
        })
    }

    /// Seeded random distribution with every entry strictly positive.
    pub fn random(vocab_size: usize, seq_len: usize, seed: u64) -> Result<Self> {
        let len = table_len(vocab_size, seq_len, DEFAULT_MAX_ENTRIES)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<T> = (0..len)
            .map(|_| T::of(1e-3 + rng.random::<f64>()))
            .collect();
        Self::normalize(&raw, vocab_size, seq_len)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    /// Row-major index: position 1 is the most significant digit.
    pub fn index_of(&self, values: &[u32]) -> Result<usize> {
        if values.len() != self.seq_len {
            return Err(Error::LengthMismatch {
                expected: self.seq_len,
                got: values.len(),
            });
        }
        values.iter().try_fold(0usize, |acc, &v| {
            if v as usize >= self.vocab_size {
                Err(Error::TokenOutOfRange {
                    id: v as u64,
                    vocab: self.vocab_size,
                })
            } else {
                Ok(acc * self.vocab_size + v as usize)
            }
        })
    }

    pub fn assignment_of(&self, mut index: usize) -> SequenceAssignment {
        let mut values = vec![0u32; self.seq_len];
        for slot in values.iter_mut().rev() {
            *slot = (index % self.vocab_size) as u32;
            index /= self.vocab_size;
        }
        SequenceAssignment(values)
    }

    pub fn joint_probability(&self, seq: &SequenceAssignment) -> Result<T> {
        Ok(self.probs[self.index_of(seq.values())?])
    }

    /// Probability that every `Some` position holds its value, summing the
    /// unassigned positions out. `assigned[p]` refers to 0-based position `p`.
    pub fn marginal(&self, assigned: &[Option<u32>]) -> Result<T> {
        if assigned.len() != self.seq_len {
            return Err(Error::LengthMismatch {
                expected: self.seq_len,
                got: assigned.len(),
            });
        }
        for v in assigned.iter().flatten() {
            if *v as usize >= self.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id: *v as u64,
                    vocab: self.vocab_size,
                });
            }
        }
        if assigned.iter().all(Option::is_none) {
            return Ok(kahan_sum(self.probs.iter().copied()));
        }
        // Strides let each entry be tested without a full digit decode.
        let mut strides = vec![1usize; self.seq_len];
        for p in (0..self.seq_len.saturating_sub(1)).rev() {
            strides[p] = strides[p + 1] * self.vocab_size;
        }
        let constraints: Vec<(usize, usize)> = assigned
            .iter()
            .enumerate()
            .filter_map(|(p, v)| v.map(|v| (strides[p], v as usize)))
            .collect();
        let v = self.vocab_size;
        let matching = self.probs.iter().enumerate().filter_map(|(idx, &p)| {
            constraints
                .iter()
                .all(|&(stride, val)| (idx / stride) % v == val)
                .then_some(p)
        });
        Ok(kahan_sum(matching))
    }

    /// `P(X_position = value | context)`, with `position` 0-based and the
    /// context given as a partial assignment that must leave `position` free.
    pub fn conditional(&self, position: usize, value: u32, context: &[Option<u32>]) -> Result<T> {
        if position >= self.seq_len {
            return Err(Error::invalid(format!(
                "position {position} outside sequence of length {}",
                self.seq_len
            )));
        }
        if context.get(position).copied().flatten().is_some() {
            return Err(Error::invalid(format!(
                "context already assigns target position {position}"
            )));
        }
        let denom = self.marginal(context)?;
        if denom <= T::zero() {
            return Err(Error::NullEvent);
        }
        let mut joint = context.to_vec();
        joint[position] = Some(value);
        Ok(self.marginal(&joint)? / denom)
    }

    /// Perplexity from the chain-rule conditionals taken in order σ.
    pub fn perplexity_via_factorization(
        &self,
        seq: &SequenceAssignment,
        sigma: &Permutation,
    ) -> Result<T> {
        self.index_of(seq.values())?;
        if sigma.n() != self.seq_len {
            return Err(Error::LengthMismatch {
                expected: self.seq_len,
                got: sigma.n(),
            });
        }
        let mut context = vec![None; self.seq_len];
        let mut log_sum = T::zero();
        for &target in sigma.map() {
            let pos = target as usize - 1;
            let value = seq.values()[pos];
            let p = match self.conditional(pos, value, &context) {
                Err(Error::NullEvent) => return Err(Error::ZeroProbability),
                other => other?,
            };
            if p <= T::zero() {
                return Err(Error::ZeroProbability);
            }
            log_sum += p.ln();
            context[pos] = Some(value);
        }
        Ok((-log_sum / T::of(self.seq_len as f64)).exp())
    }

    /// `exp(-(1/n) ln P(X_1..X_n))`.
    pub fn perplexity_via_joint(&self, seq: &SequenceAssignment) -> Result<T> {
        perplexity_from_joint(self.joint_probability(seq)?, self.seq_len)
    }

    pub fn verify_invariance(
        &self,
        seq: &SequenceAssignment,
        sigmas: &[Permutation],
        tol: T,
    ) -> Result<InvarianceReport<T>> {
        if sigmas.is_empty() {
            return Err(Error::invalid("no permutations to verify"));
        }
        let pp_joint = self.perplexity_via_joint(seq)?;
        let mut rows = Vec::with_capacity(sigmas.len());
        for sigma in sigmas {
            let pp_factorized = self.perplexity_via_factorization(seq, sigma)?;
            let rel_dev = (pp_factorized - pp_joint).abs() / pp_joint;
            rows.push(SigmaCheck {
                sigma: sigma.clone(),
                pp_factorized,
                pp_joint,
                rel_dev,
                pass: rel_dev <= tol,
            });
        }
        let max_rel_dev = rows
            .iter()
            .map(|r| r.rel_dev)
            .fold(T::zero(), |a, b| a.max(b));
        Ok(InvarianceReport {
            rows,
            max_rel_dev,
            tol,
        })
    }

    /// Partial products with the BOS term dropped: forward
    /// `P(X_2|X_1)…P(X_n|X_1..X_{n-1})` and backward
    /// `P(X_{n-1}|X_n)…P(X_1|X_2..X_n)`. Without a BOS context the first real
    /// token of each direction is never scored, so the two generally differ.
    pub fn negative_control_drop_bos(&self, seq: &SequenceAssignment) -> Result<(T, T)> {
        let n = self.seq_len;
        if n < 2 {
            return Err(Error::invalid("dropping the BOS term needs at least two positions"));
        }
        self.index_of(seq.values())?;
        let vals = seq.values();
        let partial = |order: &mut dyn Iterator<Item = usize>| -> Result<T> {
            let mut context = vec![None; n];
            let first = order.next().expect("n >= 2");
            context[first] = Some(vals[first]);
            let mut log_sum = T::zero();
            for pos in order {
                let p = match self.conditional(pos, vals[pos], &context) {
                    Err(Error::NullEvent) => return Err(Error::ZeroProbability),
                    other => other?,
                };
                if p <= T::zero() {
                    return Err(Error::ZeroProbability);
                }
                log_sum += p.ln();
                context[pos] = Some(vals[pos]);
            }
            Ok(log_sum.exp())
        };
        let forward = partial(&mut (0..n))?;
        let backward = partial(&mut (0..n).rev())?;
        Ok((forward, backward))
    }
}

pub fn perplexity_from_joint<T: Scalar>(joint: T, n: usize) -> Result<T> {
    if joint <= T::zero() {
        return Err(Error::ZeroProbability);
    }
    Ok((-joint.ln() / T::of(n as f64)).exp())
}

fn kahan_sum<T: Scalar>(values: impl Iterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

#[derive(Debug, Clone)]
pub struct SigmaCheck<T> {
    pub sigma: Permutation,
    pub pp_factorized: T,
    pub pp_joint: T,
    pub rel_dev: T,
    pub pass: bool,
}

impl<T> SigmaCheck<T> {
    /// The map written as `3-1-2`.
    pub fn sigma_id(&self) -> String {
        self.sigma
            .map()
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join("-")
    }
}

#[derive(Debug, Clone)]
pub struct InvarianceReport<T> {
    pub rows: Vec<SigmaCheck<T>>,
    pub max_rel_dev: T,
    pub tol: T,
}

impl<T: Scalar> InvarianceReport<T> {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn first_failure(&self) -> Option<&SigmaCheck<T>> {
        self.rows.iter().find(|r| !r.pass)
    }

    /// CSV with columns `sigma_id,pp_factorized,pp_joint,rel_dev,pass`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma_id,pp_factorized,pp_joint,rel_dev,pass\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.6e},{}\n",
                r.sigma_id(),
                r.pp_factorized.f64(),
                r.pp_joint.f64(),
                r.rel_dev.f64(),
                r.pass
            ));
        }
        out
    }
}

fn factorial_capped(n: usize, cap: usize) -> Option<usize> {
    (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k).filter(|&v| v <= cap))
}

/// All `n!` permutations in lexicographic order when `n! <= cap`; otherwise
/// `cap` distinct ones: identity, reversal, then seeded uniform shuffles.
pub fn enumerate_permutations(n: usize, cap: usize, seed: u64) -> Result<Vec<Permutation>> {
    if n == 0 {
        return Err(Error::invalid("permutation length must be at least 1"));
    }
    if factorial_capped(n, cap).is_some() {
        let mut out = Vec::new();
        let mut current: Vec<u32> = (1..=n as u32).collect();
        loop {
            out.push(tag(current.clone())?);
            if !next_lexicographic(&mut current) {
                break;
            }
        }
        return Ok(out);
    }
    let identity = Permutation::identity(n)?;
    let reversal = Permutation::reversal(n)?;
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    seen.insert(identity.map().to_vec());
    seen.insert(reversal.map().to_vec());
    let mut out = vec![identity, reversal];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map: Vec<u32> = (1..=n as u32).collect();
    while out.len() < cap.max(2) {
        map.shuffle(&mut rng);
        if seen.insert(map.clone()) {
            out.push(Permutation::explicit(map.clone())?);
        }
    }
    Ok(out)
}

fn tag(map: Vec<u32>) -> Result<Permutation> {
    let p = Permutation::explicit(map)?;
    if p.is_identity() {
        Permutation::identity(p.n())
    } else if p.is_reversal() {
        Permutation::reversal(p.n())
    } else {
        Ok(p)
    }
}

fn next_lexicographic(v: &mut [u32]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).expect("pivot exists");
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small() -> TabularDistribution<f64> {
        TabularDistribution::normalize(&[4.0, 1.0, 2.0, 3.0], 2, 2).unwrap()
    }

    /// Marginal by decoding every entry; shares nothing with `marginal`.
    fn brute_marginal(d: &TabularDistribution<f64>, assigned: &[Option<u32>]) -> f64 {
        let mut total = 0.0;
        for idx in 0..d.probs().len() {
            let a = d.assignment_of(idx);
            if assigned
                .iter()
                .zip(a.values())
                .all(|(want, have)| want.is_none_or(|w| w == *have))
            {
                total += d.probs()[idx];
            }
        }
        total
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(small().probs(), &[0.4, 0.1, 0.2, 0.3]);
        let u = TabularDistribution::normalize(&[1.0f64; 4], 2, 2).unwrap();
        assert_eq!(u.probs(), &[0.25; 4]);
        assert!(matches!(
            TabularDistribution::normalize(&[0.0f64; 4], 2, 2),
            Err(Error::AllZeroMass)
        ));
        assert!(TabularDistribution::normalize(&[1.0f64, -1.0, 1.0, 1.0], 2, 2).is_err());
        assert!(TabularDistribution::normalize(&[1.0f64, f64::NAN, 1.0, 1.0], 2, 2).is_err());
        assert!(TabularDistribution::normalize(&[1.0f64; 3], 2, 2).is_err());
        assert!(TabularDistribution::<f64>::normalize_with_cap(&[1.0; 8], 2, 3, 4).is_err());
    }

    #[test]
    fn random_is_normalized() {
        let d = TabularDistribution::<f64>::random(3, 5, 9).unwrap();
        let s: f64 = d.probs().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(d.probs().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn joint_lookup() {
        let d = small();
        assert_eq!(d.joint_probability(&vec![0, 1].into()).unwrap(), 0.1);
        assert_eq!(d.joint_probability(&vec![1, 1].into()).unwrap(), 0.3);
        let u = TabularDistribution::normalize(&[1.0f64; 8], 2, 3).unwrap();
        assert_eq!(u.joint_probability(&vec![1, 0, 1].into()).unwrap(), 0.125);
        assert!(matches!(
            d.joint_probability(&vec![0, 2].into()),
            Err(Error::TokenOutOfRange { .. })
        ));
    }

    #[test]
    fn conditional_examples() {
        let d = small();
        // Oracle: P(X1=0,X2=1) / P(X1=0) enumerated by hand.
        let num = brute_marginal(&d, &[Some(0), Some(1)]);
        let den = brute_marginal(&d, &[Some(0), None]);
        assert_relative_eq!(num / den, 0.2, epsilon = 1e-15);
        assert_relative_eq!(d.conditional(1, 1, &[Some(0), None]).unwrap(), 0.2, epsilon = 1e-15);
        assert_relative_eq!(d.conditional(0, 0, &[None, None]).unwrap(), 0.5, epsilon = 1e-15);

        let z = TabularDistribution::normalize(&[0.0f64, 0.0, 1.0, 1.0], 2, 2).unwrap();
        assert!(matches!(z.conditional(1, 0, &[Some(0), None]), Err(Error::NullEvent)));
        assert!(d.conditional(1, 0, &[None, Some(1)]).is_err());
    }

    #[test]
    fn conditional_consistency() {
        let d = TabularDistribution::<f64>::random(3, 4, 21).unwrap();
        let ctx = [Some(2), None, Some(0), None];
        for value in 0..3 {
            let c = d.conditional(3, value, &ctx).unwrap();
            let mut full = ctx;
            full[3] = Some(value);
            let lhs = c * brute_marginal(&d, &ctx);
            assert!((lhs - brute_marginal(&d, &full)).abs() < 1e-12);
        }
    }

    #[test]
    fn factorized_examples() {
        let d = small();
        let seq: SequenceAssignment = vec![0, 1].into();
        let expected = (-0.5 * 0.1f64.ln()).exp();
        assert_relative_eq!(expected, 3.1622776601683795, epsilon = 1e-15);
        let fwd = d.perplexity_via_factorization(&seq, &Permutation::identity(2).unwrap()).unwrap();
        let bwd = d.perplexity_via_factorization(&seq, &Permutation::reversal(2).unwrap()).unwrap();
        assert_relative_eq!(fwd, expected, max_relative = 1e-14);
        assert_relative_eq!(bwd, expected, max_relative = 1e-14);
        assert_relative_eq!(d.perplexity_via_joint(&seq).unwrap(), expected, max_relative = 1e-14);

        let u = TabularDistribution::normalize(&[1.0f64; 8], 2, 3).unwrap();
        for sigma in enumerate_permutations(3, 10, 0).unwrap() {
            let pp = u.perplexity_via_factorization(&vec![0, 1, 1].into(), &sigma).unwrap();
            assert_relative_eq!(pp, 2.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn joint_perplexity_examples() {
        assert_relative_eq!(perplexity_from_joint(0.1f64, 2).unwrap(), 3.1622776601683795, max_relative = 1e-15);
        assert_eq!(perplexity_from_joint(1.0f64, 7).unwrap(), 1.0);
        assert_relative_eq!(perplexity_from_joint(0.125f64, 3).unwrap(), 2.0, max_relative = 1e-15);
        assert!(matches!(perplexity_from_joint(0.0f64, 3), Err(Error::ZeroProbability)));
    }

    #[test]
    fn zero_mass_sequence_is_an_error() {
        let d = TabularDistribution::normalize(&[1.0f64, 0.0, 1.0, 1.0], 2, 2).unwrap();
        let seq: SequenceAssignment = vec![0, 1].into();
        let sigmas = enumerate_permutations(2, 10, 0).unwrap();
        assert!(matches!(d.verify_invariance(&seq, &sigmas, 1e-9), Err(Error::ZeroProbability)));
        assert!(matches!(
            d.perplexity_via_factorization(&seq, &sigmas[1]),
            Err(Error::ZeroProbability)
        ));
        assert!(d.verify_invariance(&vec![0, 0].into(), &[], 1e-9).is_err());
    }

    #[test]
    fn five_positions_all_orders() {
        let d = TabularDistribution::<f64>::random(3, 5, 4).unwrap();
        let seq: SequenceAssignment = vec![2, 0, 1, 1, 2].into();
        let sigmas = enumerate_permutations(5, 1000, 0).unwrap();
        assert_eq!(sigmas.len(), 120);
        let report = d.verify_invariance(&seq, &sigmas, 1e-9).unwrap();
        assert!(report.passed(), "max rel dev {}", report.max_rel_dev);
        let csv = report.to_csv();
        assert!(csv.starts_with("sigma_id,pp_factorized,pp_joint,rel_dev,pass\n1-2-3-4-5,"));
        assert_eq!(csv.lines().count(), 121);
    }

    #[test]
    fn single_precision_still_close() {
        let d = TabularDistribution::<f32>::random(2, 4, 3).unwrap();
        let seq: SequenceAssignment = vec![1, 0, 0, 1].into();
        let sigmas = enumerate_permutations(4, 100, 0).unwrap();
        let report = d.verify_invariance(&seq, &sigmas, 1e-4).unwrap();
        assert!(report.passed());
    }

    #[test]
    fn drop_bos_examples() {
        let d = small();
        let (f, b) = d.negative_control_drop_bos(&vec![0, 1].into()).unwrap();
        assert_relative_eq!(f, 0.2, max_relative = 1e-14);
        assert_relative_eq!(b, 0.25, max_relative = 1e-14);

        let u = TabularDistribution::normalize(&[1.0f64; 8], 2, 3).unwrap();
        let (f, b) = u.negative_control_drop_bos(&vec![0, 1, 0].into()).unwrap();
        assert_relative_eq!(f, b, max_relative = 1e-14);

        let point = TabularDistribution::normalize(&[1.0f64, 0.0, 0.0, 0.0], 2, 2).unwrap();
        assert_eq!(point.negative_control_drop_bos(&vec![0, 0].into()).unwrap(), (1.0, 1.0));

        let one = TabularDistribution::normalize(&[1.0f64, 1.0], 2, 1).unwrap();
        assert!(one.negative_control_drop_bos(&vec![0].into()).is_err());
    }

    #[test]
    fn permutation_enumeration() {
        let all = enumerate_permutations(3, 10, 1).unwrap();
        assert_eq!(all.len(), 6);
        assert!(all[0].is_identity());
        assert!(all[5].is_reversal());

        let sampled = enumerate_permutations(6, 100, 1).unwrap();
        assert_eq!(sampled.len(), 100);
        let distinct: HashSet<_> = sampled.iter().map(|p| p.map().to_vec()).collect();
        assert_eq!(distinct.len(), 100);
        assert!(sampled.iter().any(Permutation::is_identity));
        assert!(sampled.iter().any(Permutation::is_reversal));
        assert_eq!(enumerate_permutations(6, 100, 1).unwrap(), sampled);

        let one = enumerate_permutations(1, 5, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].is_identity());
    }
}
