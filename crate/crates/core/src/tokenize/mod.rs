//! Forward-trained byte-level BPE and the BOS-prefixed window packing protocol.

mod bpe;
mod pack;

pub use bpe::{Tokenizer, BASE_VOCAB, BOS_ID};
pub use pack::{ensure_same_provenance, pack_corpus, Packed, PackedDataset, PackedSequence, Split};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Reads UTF-8 corpus files and concatenates them in lexicographic filename
/// order. Documents are joined with no separator.
pub fn read_corpus(paths: &[PathBuf]) -> Result<Vec<u8>> {
    let mut files: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()).then(a.cmp(b)));
    let mut out = Vec::new();
    for path in files {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        out.extend_from_slice(text.as_bytes());
    }
    Ok(out)
}

/// Maps symbols `0..k` of a synthetic source onto token ids `1..=k`, leaving
/// id 0 for BOS.
pub fn symbols_to_ids(symbols: &[u32]) -> Vec<u32> {
    symbols.iter().map(|&s| s + 1).collect()
}
