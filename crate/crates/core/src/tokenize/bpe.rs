//! Byte-level BPE trained on forward text only.
//!
//! Id layout: `0` is BOS, `1..=256` are raw bytes, merged tokens follow in
//! merge-rank order. Whitespace is an ordinary byte; there is no
//! pre-tokenization, so merges may cross word boundaries.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hash::content_hash;

pub const BOS_ID: u32 = 0;
/// Number of raw byte symbols.
pub const BASE_VOCAB: usize = 256;
const FIRST_MERGE_ID: u32 = BASE_VOCAB as u32 + 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    vocab: Vec<Vec<u8>>,
    merges: Vec<(u32, u32)>,
    bos_id: u32,
}

#[inline]
fn byte_id(b: u8) -> u32 {
    b as u32 + 1
}

fn base_vocab() -> Vec<Vec<u8>> {
    let mut vocab = Vec::with_capacity(BASE_VOCAB + 1);
    vocab.push(Vec::new());
    vocab.extend((0..=255u8).map(|b| vec![b]));
    vocab
}

/// Replaces every left-to-right occurrence of `pair` with `new_id`.
fn merge_pass(ids: &mut Vec<u32>, pair: (u32, u32), new_id: u32) {
    let mut write = 0;
    let mut read = 0;
    while read < ids.len() {
        if read + 1 < ids.len() && ids[read] == pair.0 && ids[read + 1] == pair.1 {
            ids[write] = new_id;
            read += 2;
        } else {
            ids[write] = ids[read];
            read += 1;
        }
        write += 1;
    }
    ids.truncate(write);
}

impl Tokenizer {
    /// Trains merges until the vocabulary (BOS + 256 bytes + merges) reaches
    /// `vocab_size`, or the corpus has no adjacent pairs left.
    ///
    /// Each round merges the most frequent adjacent pair, ties broken by the
    /// smallest `(left, right)` id pair. Pairs whose concatenation already
    /// names a token are skipped so byte strings identify tokens uniquely.
    pub fn train(corpus: &[u8], vocab_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid("cannot train a tokenizer on an empty corpus"));
        }
        if vocab_size <= BASE_VOCAB + 1 {
            return Err(Error::invalid(format!(
                "vocab_size {vocab_size} leaves no room for merges (need > {})",
                BASE_VOCAB + 1
            )));
        }
        let mut vocab = base_vocab();
        let mut known: HashSet<Vec<u8>> = vocab.iter().skip(1).cloned().collect();
        let mut merges = Vec::with_capacity(vocab_size - BASE_VOCAB - 1);
        let mut ids: Vec<u32> = corpus.iter().copied().map(byte_id).collect();
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();

        while vocab.len() < vocab_size {
            counts.clear();
            for w in ids.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += 1;
            }
            let best = counts
                .iter()
                .filter(|(pair, _)| {
                    let mut s = vocab[pair.0 as usize].clone();
                    s.extend_from_slice(&vocab[pair.1 as usize]);
                    !known.contains(&s)
                })
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then(pb.cmp(pa)))
                .map(|(pair, _)| *pair);
            let Some(pair) = best else { break };
            let new_id = vocab.len() as u32;
            let mut bytes = vocab[pair.0 as usize].clone();
            bytes.extend_from_slice(&vocab[pair.1 as usize]);
            known.insert(bytes.clone());
            vocab.push(bytes);
            merges.push(pair);
            merge_pass(&mut ids, pair, new_id);
        }
        Ok(Self {
            vocab,
            merges,
            bos_id: BOS_ID,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn bos_id(&self) -> u32 {
        self.bos_id
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.vocab.get(id as usize).map(Vec::as_slice)
    }

    /// Applies merges in rank order. Never emits BOS.
    pub fn encode(&self, text: &[u8]) -> Vec<u32> {
        let mut ids: Vec<u32> = text.iter().copied().map(byte_id).collect();
        for (rank, &pair) in self.merges.iter().enumerate() {
            if ids.len() < 2 {
                break;
            }
            merge_pass(&mut ids, pair, FIRST_MERGE_ID + rank as u32);
        }
        ids
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(ids.len() * 2);
        for &id in ids {
            if id == self.bos_id {
                return Err(Error::invalid("BOS id inside a sequence to decode"));
            }
            let bytes = self.token_bytes(id).ok_or(Error::TokenOutOfRange {
                id: id as u64,
                vocab: self.vocab_size(),
            })?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    /// `BPETOK v1 <vocab_size> <bos_id>` then one merge per line as two
    /// hex-encoded byte strings, in rank order.
    pub fn to_text(&self) -> String {
        let mut out = format!("BPETOK v1 {} {}\n", self.vocab_size(), self.bos_id);
        for &(a, b) in &self.merges {
            out.push_str(&hex::encode(&self.vocab[a as usize]));
            out.push(' ');
            out.push_str(&hex::encode(&self.vocab[b as usize]));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (vocab_size, bos_id) = match fields[..] {
            ["BPETOK", "v1", v, b] => (
                v.parse::<usize>()
                    .map_err(|_| Error::invalid("bad tokenizer vocab size"))?,
                b.parse::<u32>().map_err(|_| Error::invalid("bad tokenizer bos id"))?,
            ),
            _ => return Err(Error::invalid(format!("bad tokenizer header '{header}'"))),
        };
        if bos_id != BOS_ID {
            return Err(Error::invalid(format!("unsupported bos id {bos_id}")));
        }
        let mut vocab = base_vocab();
        let mut lookup: HashMap<Vec<u8>, u32> = vocab
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, b)| (b.clone(), i as u32))
            .collect();
        let mut merges = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [l, r] = parts[..] else {
                return Err(Error::invalid(format!("bad merge line '{line}'")));
            };
            let decode = |h: &str| -> Result<u32> {
                let bytes = hex::decode(h).map_err(|_| Error::invalid(format!("bad hex '{h}'")))?;
                lookup
                    .get(&bytes)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("merge references unknown token '{h}'")))
            };
            let pair = (decode(l)?, decode(r)?);
            let mut bytes = vocab[pair.0 as usize].clone();
            bytes.extend_from_slice(&vocab[pair.1 as usize]);
            if lookup.insert(bytes.clone(), vocab.len() as u32).is_some() {
                return Err(Error::invalid("merge produces a duplicate token"));
            }
            vocab.push(bytes);
            merges.push(pair);
        }
        if vocab.len() != vocab_size {
            return Err(Error::LengthMismatch {
                expected: vocab_size,
                got: vocab.len(),
            });
        }
        Ok(Self {
            vocab,
            merges,
            bos_id,
        })
    }

    /// Provenance hash: the hash of the serialized file.
    pub fn content_hash(&self) -> String {
        content_hash(self.to_text().as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Tokenizer {
        let text = "the cat sat on the mat; the hat sat flat on the cat. ".repeat(4)
            + "a bat and a rat ran past the vast black cart, then sat back.";
        Tokenizer::train(text.as_bytes(), 300).unwrap()
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        // Oracle: count adjacent pairs directly.
        let corpus = b"aaaa aaaa";
        let mut counts: HashMap<(u8, u8), usize> = HashMap::new();
        for w in corpus.windows(2) {
            *counts.entry((w[0], w[1])).or_default() += 1;
        }
        let top = counts.iter().max_by_key(|(_, c)| **c).unwrap().0;
        assert_eq!(*top, (b'a', b'a'));

        let tok = Tokenizer::train(corpus, BASE_VOCAB + 2).unwrap();
        assert_eq!(tok.merges(), &[(byte_id(b'a'), byte_id(b'a'))]);
        assert_eq!(tok.vocab_size(), BASE_VOCAB + 2);
        assert_eq!(tok.encode(b"aa"), vec![FIRST_MERGE_ID]);
    }

    #[test]
    fn training_errors() {
        assert!(Tokenizer::train(b"", 300).is_err());
        assert!(Tokenizer::train(b"abc", BASE_VOCAB + 1).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        assert_eq!(sample().to_text(), sample().to_text());
    }

    #[test]
    fn merge_count_matches_vocab() {
        let tok = sample();
        assert_eq!(tok.merges().len(), tok.vocab_size() - BASE_VOCAB - 1);
        assert_eq!(tok.vocab_size(), 300);
        // A corpus with few distinct pairs stops early.
        let small = Tokenizer::train(b"abab", 300).unwrap();
        assert_eq!(small.vocab_size(), BASE_VOCAB + 1 + 2);
    }

    #[test]
    fn encode_decode_basics() {
        let tok = sample();
        assert!(tok.encode(b"").is_empty());
        assert_eq!(tok.decode(&[]).unwrap(), b"");
        let ids = tok.encode(b"the cat");
        assert!(ids.len() < 7);
        assert!(!ids.contains(&BOS_ID));
        assert_eq!(tok.decode(&ids).unwrap(), b"the cat");
        assert!(tok.decode(&[tok.vocab_size() as u32]).is_err());
        assert!(tok.decode(&[BOS_ID]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let tok = sample();
        let back = Tokenizer::from_text(&tok.to_text()).unwrap();
        assert_eq!(back, tok);
        assert!(tok.to_text().starts_with("BPETOK v1 300 0\n"));
        assert!(Tokenizer::from_text("BPETOK v2 300 0\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_identity(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let tok = sample();
            let ids = tok.encode(&bytes);
            prop_assert!(!ids.contains(&BOS_ID));
            prop_assert_eq!(tok.decode(&ids).unwrap(), bytes);
        }
    }
}
