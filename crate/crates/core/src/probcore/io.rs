//! Plain-text distribution files: a `V n` header line, then `V^n`
//! whitespace-separated nonnegative masses in row-major order.

use std::path::Path;

use super::TabularDistribution;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn parse_distribution<T: Scalar>(text: &str) -> Result<TabularDistribution<T>> {
    let mut lines = text.lines();
    let header = lines
        .by_ref()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::invalid("empty distribution file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::invalid(format!("bad header field '{t}'"))))
        .collect::<Result<_>>()?;
    let [vocab_size, seq_len] = dims[..] else {
        return Err(Error::invalid(format!("header must be 'V n', got '{header}'")));
    };
    let raw: Vec<T> = lines
        .flat_map(str::split_whitespace)
        .map(|t| {
            t.parse::<f64>()
                .map(T::of)
                .map_err(|_| Error::invalid(format!("bad mass entry '{t}'")))
        })
        .collect::<Result<_>>()?;
    TabularDistribution::normalize(&raw, vocab_size, seq_len)
}

pub fn read_distribution<T: Scalar>(path: &Path) -> Result<TabularDistribution<T>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    parse_distribution(&text)
}

pub fn write_distribution<T: Scalar>(dist: &TabularDistribution<T>, path: &Path) -> Result<()> {
    let mut out = format!("{} {}\n", dist.vocab_size(), dist.seq_len());
    for row in dist.probs().chunks(dist.vocab_size()) {
        let line: Vec<String> = row.iter().map(|p| format!("{:e}", p.f64())).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reader_normalizes() {
        let d: TabularDistribution<f64> = parse_distribution("2 2\n4 1\n2 3\n").unwrap();
        assert_eq!(d.probs(), &[0.4, 0.1, 0.2, 0.3]);
        assert!(parse_distribution::<f64>("2 2\n4 1 2\n").is_err());
        assert!(parse_distribution::<f64>("2\n4 1 2 3\n").is_err());
        assert!(parse_distribution::<f64>("").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt");
        let d = TabularDistribution::<f64>::random(3, 3, 1).unwrap();
        write_distribution(&d, &path).unwrap();
        let back: TabularDistribution<f64> = read_distribution(&path).unwrap();
        for (a, b) in d.probs().iter().zip(back.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
