use super::attention::midranks;
use super::stats::pearson_r;
use crate::error::{Error, Result};
use crate::model::HiddenTensor;
use crate::ordering::Permutation;
use crate::scalar::Scalar;

/// Symmetric `n × n` cosine-dissimilarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Rdm {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Rdm {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * (self.n - 1) / 2);
        for i in 0..self.n {
            for j in i + 1..self.n {
                out.push(self.get(i, j));
            }
        }
        out
    }
}

/// `1 - cos(h_i, h_j)` over rows of a row-major `[n, dim]` matrix.
pub fn build_rdm<T: Scalar>(rows: &[T], dim: usize) -> Result<Rdm> {
    if dim == 0 || !rows.len().is_multiple_of(dim) {
        return Err(Error::invalid("hidden matrix is not a whole number of rows"));
    }
    let n = rows.len() / dim;
    let unit: Vec<Vec<f64>> = rows
        .chunks(dim)
        .enumerate()
        .map(|(i, r)| {
            let v: Vec<f64> = r.iter().map(|x| x.f64()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::invalid(format!("hidden state {i} has zero norm")));
            }
            Ok(v.into_iter().map(|x| x / norm).collect())
        })
        .collect::<Result<_>>()?;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let cos: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            let v = (1.0 - cos).clamp(0.0, 2.0);
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(Rdm { n, data })
}

/// Spearman correlation of the strict upper triangles, midranks for ties.
pub fn rsa(a: &Rdm, b: &Rdm) -> Result<f64> {
    if a.n != b.n {
        return Err(Error::LengthMismatch { expected: a.n, got: b.n });
    }
    if a.n < 3 {
        return Err(Error::invalid("rsa needs at least 3 rows"));
    }
    spearman(&a.upper_triangle(), &b.upper_triangle())
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson_r(&midranks(x), &midranks(y)).map_err(|_| Error::ZeroVariance("rank vector"))
}

/// Returns the rows of a model that saw its window reordered by `perm` to
/// forward positions. Row 0 (BOS) stays in place.
pub fn reorder_hidden<T: Copy>(rows: &[T], dim: usize, perm: &Permutation) -> Result<Vec<T>> {
    if dim == 0 || !rows.len().is_multiple_of(dim) {
        return Err(Error::invalid("hidden matrix is not a whole number of rows"));
    }
    let t = rows.len() / dim;
    if perm.n() + 1 != t {
        return Err(Error::LengthMismatch { expected: perm.n() + 1, got: t });
    }
    let mut out = rows.to_vec();
    for j in 1..t {
        let src = perm.sigma(j);
        out[src * dim..(src + 1) * dim].copy_from_slice(&rows[j * dim..(j + 1) * dim]);
    }
    Ok(out)
}

/// Mean RSA per layer between two models' hidden states on the same
/// sequences. Each side is first restored to forward order.
pub fn rsa_by_layer<T: Scalar>(
    a: &[HiddenTensor<T>],
    perm_a: &Permutation,
    b: &[HiddenTensor<T>],
    perm_b: &Permutation,
) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("rsa needs the same nonempty set of sequences for both models"));
    }
    let layers = a[0].layers;
    let mut out = vec![0.0; layers];
    for (ha, hb) in a.iter().zip(b) {
        if (ha.layers, ha.len) != (hb.layers, hb.len) || ha.layers != layers {
            return Err(Error::invalid("hidden tensors differ in shape"));
        }
        for (l, slot) in out.iter_mut().enumerate() {
            let ra = build_rdm(&reorder_hidden(ha.layer(l), ha.dim, perm_a)?, ha.dim)?;
            let rb = build_rdm(&reorder_hidden(hb.layer(l), hb.dim, perm_b)?, hb.dim)?;
            *slot += rsa(&ra, &rb)?;
        }
    }
    let n = a.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ordering::PermKind;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rdm_cases() {
        let same = build_rdm(&[1.0, 2.0, 2.0, 4.0], 2).unwrap();
        assert!(same.data.iter().all(|v| v.abs() < 1e-12));
        let orth = build_rdm(&[1.0, 0.0, 0.0, 3.0], 2).unwrap();
        assert_abs_diff_eq!(orth.get(0, 1), 1.0, epsilon = 1e-12);
        let anti = build_rdm(&[1.0, 1.0, -2.0, -2.0], 2).unwrap();
        assert_abs_diff_eq!(anti.get(1, 0), 2.0, epsilon = 1e-12);
        assert!(build_rdm(&[0.0, 0.0, 1.0, 0.0], 2).is_err());
    }

    #[test]
    fn spearman_example() {
        let rho = spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(rho, -0.5, epsilon = 1e-12);
        assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn rsa_self_and_reversed() {
        let rows: Vec<f64> = (0..12).map(|k| ((k * 7 % 5) as f64) + 0.5).collect();
        let r = build_rdm(&rows, 3).unwrap();
        assert_abs_diff_eq!(rsa(&r, &r).unwrap(), 1.0, epsilon = 1e-12);
        let flipped = Rdm {
            n: r.n,
            data: r
                .data
                .iter()
                .enumerate()
                .map(|(k, v)| if k / r.n == k % r.n { 0.0 } else { 2.0 - v })
                .collect(),
        };
        assert_abs_diff_eq!(rsa(&r, &flipped).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn reorder_tracks_tags() {
        // Row k of the original carries tag k; the permuted model sees
        // window position j holding original position sigma(j).
        let t = 6;
        let perm = Permutation::make(PermKind::Fixed(9), t - 1).unwrap();
        let original: Vec<u32> = (0..t as u32).collect();
        let seen = perm.apply_to_window(&original).unwrap();
        let back = reorder_hidden(&seen, 1, &perm).unwrap();
        assert_eq!(back, original);

        let rev = Permutation::make(PermKind::Backward, t - 1).unwrap();
        let twice = reorder_hidden(&reorder_hidden(&original, 1, &rev).unwrap(), 1, &rev).unwrap();
        assert_eq!(twice, original);
        let fwd = Permutation::make(PermKind::Forward, t - 1).unwrap();
        assert_eq!(reorder_hidden(&original, 1, &fwd).unwrap(), original);
    }
}
