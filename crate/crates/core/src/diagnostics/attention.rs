use crate::error::{Error, Result};
use crate::model::AttentionTensor;
use crate::scalar::Scalar;

/// Allowed deviation of a row sum from 1 (exported weights are `f32`).
pub const ROW_TOL: f64 = 1e-4;

/// Mean normalized entropy per `(layer, context size i)`, `i = 1..=len`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyProfile {
    pub layers: Vec<usize>,
    pub len: usize,
    /// `values[k][i - 1]` for `layers[k]`.
    pub values: Vec<Vec<f64>>,
}

/// Mean normalized rank per `(layer, distance d)`, `d = 0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankProfile {
    pub layers: Vec<usize>,
    pub len: usize,
    /// `values[k][d]`; NaN where no pair has that distance.
    pub values: Vec<Vec<f64>>,
}

fn check_row(row: &[f64], i: usize) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|&a| !(a >= -ROW_TOL) || !a.is_finite()) || (sum - 1.0).abs() > ROW_TOL {
        return Err(Error::invalid(format!(
            "attention row {i} is not a probability vector (sum {sum})"
        )));
    }
    Ok(())
}

/// `H(a) / ln i` for a row over `i` positions; 0 when `i = 1`.
pub fn normalized_entropy(row: &[f64]) -> Result<f64> {
    let i = row.len();
    if i == 0 {
        return Err(Error::invalid("empty attention row"));
    }
    check_row(row, i)?;
    if i == 1 {
        return Ok(0.0);
    }
    let h: f64 = row
        .iter()
        .filter(|&&a| a > 0.0)
        .map(|&a| -a * a.ln())
        .sum();
    Ok((h / (i as f64).ln()).clamp(0.0, 1.0))
}

/// Ascending midranks (0 for the smallest), each divided by `len - 1`.
pub fn normalized_ranks(row: &[f64]) -> Result<Vec<f64>> {
    let i = row.len();
    if i == 0 {
        return Err(Error::invalid("empty attention row"));
    }
    check_row(row, i)?;
    if i == 1 {
        return Ok(vec![0.0]);
    }
    let denom = (i - 1) as f64;
    Ok(midranks(row).into_iter().map(|r| r / denom).collect())
}

/// 0-based midranks: tied values share the mean of the positions they span.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let mid = (start + end - 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = mid;
        }
        start = end;
    }
    ranks
}

fn select_layers(layers: Option<&[usize]>, available: usize) -> Result<Vec<usize>> {
    match layers {
        None => Ok((0..available).collect()),
        Some(ls) => {
            if let Some(&bad) = ls.iter().find(|&&l| l >= available) {
                return Err(Error::invalid(format!("layer {bad} out of range (model has {available})")));
            }
            Ok(ls.to_vec())
        }
    }
}

fn common_shape<T: Scalar>(tensors: &[AttentionTensor<T>]) -> Result<(usize, usize, usize)> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::invalid("no attention tensors"))?;
    for a in tensors {
        if (a.layers, a.heads, a.len) != (first.layers, first.heads, first.len) {
            return Err(Error::invalid("attention tensors differ in shape"));
        }
    }
    Ok((first.layers, first.heads, first.len))
}

fn causal_row<T: Scalar>(a: &AttentionTensor<T>, l: usize, h: usize, i: usize) -> Result<Vec<f64>> {
    let full = a.row(l, h, i);
    if full[i + 1..].iter().any(|x| x.f64().abs() > ROW_TOL) {
        return Err(Error::invalid(format!("attention row {} attends to the future", i + 1)));
    }
    Ok(full[..=i].iter().map(|x| x.f64()).collect())
}

/// Per sequence, each head's normalized entropy is averaged over heads; the
/// per-sequence means are then averaged with equal weight.
pub fn attention_entropy<T: Scalar>(
    tensors: &[AttentionTensor<T>],
    layers: Option<&[usize]>,
) -> Result<EntropyProfile> {
    let (nl, nh, t) = common_shape(tensors)?;
    let layers = select_layers(layers, nl)?;
    let mut values = vec![vec![0.0; t]; layers.len()];
    for a in tensors {
        for (k, &l) in layers.iter().enumerate() {
            for i in 0..t {
                let mut head_sum = 0.0;
                for h in 0..nh {
                    head_sum += normalized_entropy(&causal_row(a, l, h, i)?)?;
                }
                values[k][i] += head_sum / nh as f64;
            }
        }
    }
    let n = tensors.len() as f64;
    values.iter_mut().flatten().for_each(|v| *v /= n);
    Ok(EntropyProfile { layers, len: t, values })
}

/// Normalized ranks pooled by distance `d = i - j`: averaged over pairs and
/// heads within a sequence, then over sequences.
pub fn attention_rank_bias<T: Scalar>(
    tensors: &[AttentionTensor<T>],
    layers: Option<&[usize]>,
) -> Result<RankProfile> {
    let (nl, nh, t) = common_shape(tensors)?;
    let layers = select_layers(layers, nl)?;
    let mut values = vec![vec![0.0; t]; layers.len()];
    let mut counts = vec![vec![0usize; t]; layers.len()];
    let mut seq_sum = vec![0.0; t];
    let mut seq_cnt = vec![0usize; t];
    for a in tensors {
        for (k, &l) in layers.iter().enumerate() {
            seq_sum.fill(0.0);
            seq_cnt.fill(0);
            for h in 0..nh {
                for i in 0..t {
                    let ranks = normalized_ranks(&causal_row(a, l, h, i)?)?;
                    for (j, r) in ranks.into_iter().enumerate() {
                        seq_sum[i - j] += r;
                        seq_cnt[i - j] += 1;
                    }
                }
            }
            for d in 0..t {
                if seq_cnt[d] > 0 {
                    values[k][d] += seq_sum[d] / seq_cnt[d] as f64;
                    counts[k][d] += 1;
                }
            }
        }
    }
    for (row, cnt) in values.iter_mut().zip(&counts) {
        for (v, &c) in row.iter_mut().zip(cnt) {
            *v = if c > 0 { *v / c as f64 } else { f64::NAN };
        }
    }
    Ok(RankProfile { layers, len: t, values })
}

impl EntropyProfile {
    /// Mean over context sizes `2..=len` of layer index `k`.
    pub fn mean_over_context(&self, k: usize) -> f64 {
        let vals = &self.values[k][1..];
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,context_size,h_norm\n");
        for (k, &l) in self.layers.iter().enumerate() {
            for (i, v) in self.values[k].iter().enumerate() {
                out.push_str(&format!("{l},{},{v}\n", i + 1));
            }
        }
        out
    }
}

impl RankProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,distance,r_norm\n");
        for (k, &l) in self.layers.iter().enumerate() {
            for (d, v) in self.values[k].iter().enumerate() {
                out.push_str(&format!("{l},{d},{v}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(normalized_entropy(&[0.25; 4]).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(normalized_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(normalized_entropy(&[1.0]).unwrap(), 0.0);
        let h = normalized_entropy(&[0.7, 0.1, 0.1, 0.1]).unwrap();
        assert_abs_diff_eq!(h, 0.6784, epsilon = 5e-5);
        assert!(normalized_entropy(&[0.5, 0.2]).is_err());
    }

    #[test]
    fn rank_examples() {
        let r = normalized_ranks(&[0.7, 0.1, 0.15, 0.05]).unwrap();
        let want = [1.0, 1.0 / 3.0, 2.0 / 3.0, 0.0];
        for (a, b) in r.iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        assert_eq!(normalized_ranks(&[0.25; 4]).unwrap(), vec![0.5; 4]);
        assert_eq!(normalized_ranks(&[1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn midranks_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![2.5, 0.0, 2.5, 1.0]);
    }

    fn uniform_causal(t: usize) -> AttentionTensor<f64> {
        let mut data = vec![0.0; t * t];
        for i in 0..t {
            for j in 0..=i {
                data[i * t + j] = 1.0 / (i + 1) as f64;
            }
        }
        AttentionTensor::new(1, 1, t, data).unwrap()
    }

    #[test]
    fn profiles_of_uniform_attention() {
        let a = uniform_causal(5);
        let e = attention_entropy(std::slice::from_ref(&a), None).unwrap();
        assert_eq!(e.values[0][0], 0.0);
        for v in &e.values[0][1..] {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
        let r = attention_rank_bias(&[a], None).unwrap();
        assert_abs_diff_eq!(r.values[0][1], 0.5, epsilon = 1e-12);
        // d = 0 pools i = 1 (rank 0) with the tied rows (0.5 each).
        assert_abs_diff_eq!(r.values[0][0], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn future_attention_rejected() {
        let mut a = uniform_causal(3);
        a.data[1] = 0.5;
        assert!(attention_entropy(&[a], None).is_err());
    }
}
