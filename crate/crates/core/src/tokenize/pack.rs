//! Fixed-window packing: every sequence is BOS followed by `W - 1` corpus
//! tokens, taken in corpus order with no separators or padding. The short
//! tail is dropped.
//!
//! `PKDS` files hold `"PKDS"`, little-endian `u32` window, `u32` vocab size,
//! `u64` sequence count and the row-major `u32` token ids. A trailer
//! (`"PROV"`, split byte, `u32` length, tokenizer hash) follows the token
//! data and records provenance.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hash::content_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Split::Train),
            1 => Some(Split::Validation),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackedSequence(Vec<u32>);

impl PackedSequence {
    pub fn new(tokens: Vec<u32>, bos_id: u32) -> Result<Self> {
        if tokens.first() != Some(&bos_id) {
            return Err(Error::invalid("packed sequence must start with BOS"));
        }
        if tokens[1..].contains(&bos_id) {
            return Err(Error::invalid("BOS appears after position 0"));
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    /// Tokens after BOS.
    pub fn content(&self) -> &[u32] {
        &self.0[1..]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedDataset {
    pub window: usize,
    pub vocab_size: usize,
    pub bos_id: u32,
    pub split: Split,
    pub tokenizer_hash: String,
    pub sequences: Vec<PackedSequence>,
}

/// Packing result with the number of trailing tokens dropped.
#[derive(Debug, Clone)]
pub struct Packed {
    pub dataset: PackedDataset,
    pub discarded: usize,
}

pub fn pack_corpus(
    stream: &[u32],
    window: usize,
    bos_id: u32,
    vocab_size: usize,
    tokenizer_hash: &str,
    split: Split,
) -> Result<Packed> {
    if window < 2 {
        return Err(Error::invalid("window must be at least 2"));
    }
    if let Some(&bad) = stream.iter().find(|&&t| t == bos_id || t as usize >= vocab_size) {
        return Err(Error::invalid(format!("corpus token {bad} is BOS or out of range")));
    }
    let span = window - 1;
    let sequences: Vec<PackedSequence> = stream
        .chunks_exact(span)
        .map(|chunk| {
            let mut tokens = Vec::with_capacity(window);
            tokens.push(bos_id);
            tokens.extend_from_slice(chunk);
            PackedSequence(tokens)
        })
        .collect();
    if sequences.is_empty() {
        log::warn!(
            "{split} stream of {} tokens is shorter than one window ({span} tokens); dataset is empty",
            stream.len()
        );
    }
    Ok(Packed {
        discarded: stream.len() % span,
        dataset: PackedDataset {
            window,
            vocab_size,
            bos_id,
            split,
            tokenizer_hash: tokenizer_hash.to_string(),
            sequences,
        },
    })
}

const MAGIC: &[u8; 4] = b"PKDS";
const TRAILER: &[u8; 4] = b"PROV";

impl PackedDataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.len() * self.window * 4 + 80);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.window as u32).to_le_bytes());
        out.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for seq in &self.sequences {
            for &t in seq.tokens() {
                out.extend_from_slice(&t.to_le_bytes());
            }
        }
        out.extend_from_slice(TRAILER);
        out.push(self.split.code());
        out.extend_from_slice(&(self.tokenizer_hash.len() as u32).to_le_bytes());
        out.extend_from_slice(self.tokenizer_hash.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |why: &str| Error::corrupt(path, why);
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err(bad("missing PKDS magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let window = u32_at(4) as usize;
        let vocab_size = u32_at(8) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        if window < 2 {
            return Err(bad("window below 2"));
        }
        let data_len = count
            .checked_mul(window)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| bad("sequence count overflows"))?;
        let end = 20 + data_len;
        if bytes.len() < end {
            return Err(bad("truncated token data"));
        }
        let tokens: Vec<u32> = bytes[20..end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let rest = &bytes[end..];
        if rest.len() < 9 || &rest[..4] != TRAILER {
            return Err(bad("missing provenance trailer"));
        }
        let split = Split::from_code(rest[4]).ok_or_else(|| bad("unknown split code"))?;
        let hash_len = u32::from_le_bytes(rest[5..9].try_into().unwrap()) as usize;
        if rest.len() != 9 + hash_len {
            return Err(bad("provenance trailer length mismatch"));
        }
        let tokenizer_hash = String::from_utf8(rest[9..].to_vec())
            .map_err(|_| bad("tokenizer hash is not UTF-8"))?;
        let bos_id = crate::tokenize::BOS_ID;
        let sequences = tokens
            .chunks_exact(window)
            .map(|row| {
                if row.iter().any(|&t| t as usize >= vocab_size) {
                    return Err(bad("token id outside vocabulary"));
                }
                PackedSequence::new(row.to_vec(), bos_id).map_err(|e| bad(&e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            window,
            vocab_size,
            bos_id,
            split,
            tokenizer_hash,
            sequences,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn content_hash(&self) -> String {
        content_hash(&self.to_bytes())
    }
}

/// Rejects datasets that were not all produced by the same tokenizer.
pub fn ensure_same_provenance(datasets: &[&PackedDataset]) -> Result<()> {
    let Some(first) = datasets.first() else {
        return Ok(());
    };
    for d in &datasets[1..] {
        if d.tokenizer_hash != first.tokenizer_hash {
            return Err(Error::Provenance(format!(
                "tokenizer {} differs from {}",
                d.tokenizer_hash, first.tokenizer_hash
            )));
        }
        if d.window != first.window || d.vocab_size != first.vocab_size {
            return Err(Error::Provenance("datasets disagree on window or vocabulary".into()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(n: u32) -> Vec<u32> {
        (0..n).map(|i| 1 + i % 9).collect()
    }

    #[test]
    fn packing_arithmetic() {
        let p = pack_corpus(&stream(20), 8, 0, 10, "h", Split::Train).unwrap();
        assert_eq!(p.dataset.len(), 2);
        assert_eq!(p.discarded, 6);
        assert!(p.dataset.sequences.iter().all(|s| s.len() == 8 && s.tokens()[0] == 0));
        assert_eq!(p.dataset.sequences[1].content(), &stream(14)[7..]);

        let p = pack_corpus(&stream(7), 8, 0, 10, "h", Split::Train).unwrap();
        assert_eq!((p.dataset.len(), p.discarded), (1, 0));

        let p = pack_corpus(&stream(6), 8, 0, 10, "h", Split::Train).unwrap();
        assert!(p.dataset.is_empty());
        assert!(pack_corpus(&stream(6), 1, 0, 10, "h", Split::Train).is_err());
        assert!(pack_corpus(&[0, 1, 2], 2, 0, 10, "h", Split::Train).is_err());
    }

    #[test]
    fn bos_only_at_start() {
        assert!(PackedSequence::new(vec![0, 1, 2], 0).is_ok());
        assert!(PackedSequence::new(vec![1, 0, 2], 0).is_err());
        assert!(PackedSequence::new(vec![0, 1, 0], 0).is_err());
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pkds");
        let d = pack_corpus(&stream(50), 8, 0, 10, "abc123", Split::Validation)
            .unwrap()
            .dataset;
        d.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"PKDS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 8);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 7);
        let back = PackedDataset::load(&path).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_bytes(), bytes);

        std::fs::write(&path, &bytes[..30]).unwrap();
        assert!(PackedDataset::load(&path).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, bad).unwrap();
        assert!(PackedDataset::load(&path).is_err());
    }

    #[test]
    fn provenance_mixing_rejected() {
        let a = pack_corpus(&stream(30), 8, 0, 10, "one", Split::Train).unwrap().dataset;
        let b = pack_corpus(&stream(30), 8, 0, 10, "two", Split::Validation).unwrap().dataset;
        let c = pack_corpus(&stream(30), 8, 0, 10, "one", Split::Validation).unwrap().dataset;
        assert!(ensure_same_provenance(&[&a, &b]).is_err());
        assert!(ensure_same_provenance(&[&a, &c]).is_ok());
    }
}
