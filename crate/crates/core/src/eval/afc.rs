use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{sequence_perplexity, Scorer};
use crate::diagnostics::pearson_r;
use crate::error::{Error, Result};
use crate::ordering::Permutation;

/// A correct sequence paired with a minimally altered one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwoAfcItem {
    pub id: String,
    pub original: Vec<u32>,
    pub altered: Vec<u32>,
    pub tag: String,
}

impl TwoAfcItem {
    pub fn new(id: impl Into<String>, original: Vec<u32>, altered: Vec<u32>, tag: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if original == altered {
            return Err(Error::invalid(format!("item {id}: original and altered are identical")));
        }
        if original.is_empty() || altered.is_empty() {
            return Err(Error::invalid(format!("item {id}: empty sequence")));
        }
        Ok(Self {
            id,
            original,
            altered,
            tag: tag.into(),
        })
    }
}

/// Parses `item_id TAB original TAB altered [TAB tag]` lines, encoding each
/// text with `encode`. Blank lines and `#` comments are skipped.
pub fn parse_items(text: &str, mut encode: impl FnMut(&str) -> Vec<u32>) -> Result<Vec<TwoAfcItem>> {
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&cols.len()) {
            return Err(Error::invalid(format!(
                "items line {}: expected 3 or 4 tab-separated fields, got {}",
                lineno + 1,
                cols.len()
            )));
        }
        items.push(TwoAfcItem::new(
            cols[0],
            encode(cols[1]),
            encode(cols[2]),
            cols.get(3).copied().unwrap_or(""),
        )?);
    }
    Ok(items)
}

pub fn read_items(path: &Path, encode: impl FnMut(&str) -> Vec<u32>) -> Result<Vec<TwoAfcItem>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    parse_items(&text, encode)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AfcRow {
    pub item_id: String,
    pub pp_original: f64,
    pub pp_altered: f64,
    /// `pp_altered - pp_original`; positive when the original is preferred.
    pub signed_diff: f64,
    pub correct: bool,
    /// Tie, or either sequence did not fill the scorer's window.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AfcOutcome {
    pub rows: Vec<AfcRow>,
    pub accuracy: f64,
    pub n_flagged: usize,
}

impl AfcOutcome {
    pub fn difficulty(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.signed_diff).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("item_id,pp_original,pp_altered,signed_diff,correct,flagged\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.item_id, r.pp_original, r.pp_altered, r.signed_diff, r.correct, r.flagged
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "accuracy,n_items,n_flagged\n{},{},{}\n",
            self.accuracy,
            self.rows.len(),
            self.n_flagged
        )
    }
}

/// Picks the lower-perplexity sequence of each item. Ties go to the
/// original and are flagged.
pub fn two_afc<S: Scorer + ?Sized>(scorer: &S, items: &[TwoAfcItem], ordering: &Permutation) -> Result<AfcOutcome> {
    if items.is_empty() {
        return Err(Error::invalid("no items to score"));
    }
    let mut rows = Vec::with_capacity(items.len());
    for (k, item) in items.iter().enumerate() {
        let o = sequence_perplexity(scorer, k, &item.original, ordering)?;
        let a = sequence_perplexity(scorer, k, &item.altered, ordering)?;
        let tie = o.perplexity == a.perplexity;
        rows.push(AfcRow {
            item_id: item.id.clone(),
            pp_original: o.perplexity,
            pp_altered: a.perplexity,
            signed_diff: a.perplexity - o.perplexity,
            correct: o.perplexity <= a.perplexity,
            flagged: tie || o.flagged || a.flagged,
        });
    }
    let correct = rows.iter().filter(|r| r.correct).count();
    let n_flagged = rows.iter().filter(|r| r.flagged).count();
    Ok(AfcOutcome {
        accuracy: correct as f64 / rows.len() as f64,
        n_flagged,
        rows,
    })
}

/// Reads `item_id,value` rows (an optional header is skipped) and returns
/// values in the order of `item_ids`.
pub fn read_reference(path: &Path, item_ids: &[String]) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::corrupt(path, e.to_string()))?;
    let mut values = HashMap::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::corrupt(path, e.to_string()))?;
        if rec.len() != 2 {
            return Err(Error::corrupt(path, format!("row {} needs item_id,value", k + 1)));
        }
        match rec[1].parse::<f64>() {
            Ok(v) if v.is_finite() => {
                values.insert(rec[0].to_string(), v);
            }
            _ if k == 0 => continue,
            _ => return Err(Error::corrupt(path, format!("row {}: bad value '{}'", k + 1, &rec[1]))),
        }
    }
    let missing: Vec<&str> = item_ids
        .iter()
        .filter(|id| !values.contains_key(*id))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::corrupt(path, format!("no value for items: {}", missing.join(", "))));
    }
    Ok(item_ids.iter().map(|id| values[id]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    /// Row-major `names.len()²` Pearson coefficients.
    pub r: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.r[i * self.names.len() + j])
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("name,{}\n", self.names.join(","));
        let n = self.names.len();
        for (i, name) in self.names.iter().enumerate() {
            let row: Vec<String> = self.r[i * n..(i + 1) * n].iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{name},{}", row.join(","));
        }
        out
    }
}

/// Pairwise Pearson correlation among named difficulty vectors, with an
/// optional external reference appended last.
pub fn difficulty_correlation(
    vectors: &[(String, Vec<f64>)],
    reference: Option<(&str, &[f64])>,
) -> Result<CorrelationMatrix> {
    let mut all: Vec<(&str, &[f64])> = vectors.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect();
    all.extend(reference);
    let len = all.first().map(|(_, v)| v.len()).unwrap_or(0);
    if len < 3 {
        return Err(Error::invalid("difficulty correlation needs at least 3 items"));
    }
    if all.iter().any(|(_, v)| v.len() != len) {
        return Err(Error::invalid("difficulty vectors differ in length"));
    }
    let n = all.len();
    let mut r = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = pearson_r(all[i].1, all[j].1)?;
            r[i * n + j] = v;
            r[j * n + i] = v;
        }
    }
    Ok(CorrelationMatrix {
        names: all.iter().map(|(n, _)| n.to_string()).collect(),
        r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probcore::TabularDistribution;

    fn oracle() -> TabularDistribution<f64> {
        // P(0,0)=0.3, P(0,1)=0.1, P(1,0)=0.2, P(1,1)=0.4
        TabularDistribution::normalize(&[0.3, 0.1, 0.2, 0.4], 2, 2).unwrap()
    }

    #[test]
    fn oracle_prefers_likelier_sequence() {
        let item = TwoAfcItem::new("a", vec![0, 0], vec![0, 1], "").unwrap();
        let fwd = Permutation::identity(2).unwrap();
        let out = two_afc(&oracle(), std::slice::from_ref(&item), &fwd).unwrap();
        assert_eq!(out.accuracy, 1.0);
        assert!(out.rows[0].signed_diff > 0.0);
        let bwd = Permutation::reversal(2).unwrap();
        let back = two_afc(&oracle(), std::slice::from_ref(&item), &bwd).unwrap();
        assert!((back.rows[0].signed_diff - out.rows[0].signed_diff).abs() < 1e-12);

        let swapped = TwoAfcItem::new("a", item.altered, item.original, "").unwrap();
        let s = two_afc(&oracle(), &[swapped], &fwd).unwrap();
        assert_eq!(s.accuracy, 0.0);
        assert!((s.rows[0].signed_diff + out.rows[0].signed_diff).abs() < 1e-12);
    }

    #[test]
    fn ties_pick_original_and_flag() {
        let d = TabularDistribution::<f64>::normalize(&[0.25; 4], 2, 2).unwrap();
        let item = TwoAfcItem::new("t", vec![0, 0], vec![1, 1], "").unwrap();
        let out = two_afc(&d, &[item], &Permutation::identity(2).unwrap()).unwrap();
        assert!(out.rows[0].correct && out.rows[0].flagged);
        assert_eq!(out.n_flagged, 1);
    }

    #[test]
    fn identical_pair_rejected() {
        assert!(TwoAfcItem::new("x", vec![1, 2], vec![1, 2], "").is_err());
    }

    #[test]
    fn parse_items_file() {
        let text = "# comment\nq1\tab\tba\tswap\n\nq2\tcc\tcd\n";
        let items = parse_items(text, |s| s.bytes().map(u32::from).collect()).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].tag, "swap");
        assert_eq!(items[1].altered, vec![99, 100]);
        assert!(parse_items("only\tone", |_| vec![1]).is_err());
    }

    #[test]
    fn correlation_matrix() {
        let a = vec![1.0, 2.0, 4.0, 3.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let m = difficulty_correlation(&[("a".into(), a.clone()), ("n".into(), neg)], Some(("ref", &a))).unwrap();
        assert!((m.get("a", "a").unwrap() - 1.0).abs() < 1e-12);
        assert!((m.get("a", "n").unwrap() + 1.0).abs() < 1e-12);
        assert!((m.get("ref", "a").unwrap() - 1.0).abs() < 1e-12);
        assert!(difficulty_correlation(&[("c".into(), vec![1.0; 4])], None).is_err());
    }

    #[test]
    fn reference_csv_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ref.csv");
        std::fs::write(&p, "item_id,value\nb,2.5\na,-1\n").unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        assert_eq!(read_reference(&p, &ids).unwrap(), vec![-1.0, 2.5]);
        let err = read_reference(&p, &["a".into(), "y".into(), "z".into()]).unwrap_err();
        assert!(err.to_string().contains("y, z"));
    }
}
