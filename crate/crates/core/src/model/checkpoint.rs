//! Checkpoint directories: `manifest.txt` (magic line, config, metadata, one
//! `tensor <name> <shape> <offset> <dtype>` line per tensor) and
//! `weights.bin` (`"NTCK"`, `u32` version, 64-byte config hash, `u64` value
//! count, then little-endian `f32` values in manifest order).

use std::collections::HashMap;
use std::path::Path;

use super::config::ModelConfig;
use super::params::{ParamLayout, Params};
use super::{Checkpoint, TrainMeta};
use crate::error::{Error, Result};
use crate::hash::Hasher;
use crate::scalar::Scalar;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const WEIGHTS_FILE: &str = "weights.bin";
const MAGIC: &[u8; 4] = b"NTCK";
const VERSION: u32 = 1;

impl<T: Scalar> Checkpoint<T> {
    pub fn manifest_text(&self) -> String {
        let mut out = String::from("NTCK v1\n");
        out.push_str("dtype f32\n");
        out.push_str(&format!("config_hash {}\n", self.config.config_hash()));
        for (k, v) in self.config.to_lines() {
            out.push_str(&format!("config.{k} {v}\n"));
        }
        out.push_str(&format!("meta.step {}\n", self.meta.step));
        out.push_str(&format!("meta.ordering {}\n", self.meta.ordering));
        out.push_str(&format!("meta.tokenizer_hash {}\n", self.meta.tokenizer_hash));
        out.push_str(&format!("meta.seed {}\n", self.meta.seed));
        for spec in self.params.layout().tensors() {
            let shape: Vec<String> = spec.shape.iter().map(usize::to_string).collect();
            out.push_str(&format!(
                "tensor {} {} {} f32\n",
                spec.name,
                shape.join(","),
                spec.offset
            ));
        }
        out
    }

    pub fn weights_bytes(&self) -> Vec<u8> {
        let data = self.params.as_slice();
        let mut out = Vec::with_capacity(80 + data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(self.config.config_hash().as_bytes());
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for x in data {
            out.extend_from_slice(&x.narrow().to_le_bytes());
        }
        out
    }

    /// Hash over the manifest and weight blob.
    pub fn content_hash(&self) -> String {
        let mut h = Hasher::new();
        h.update(self.manifest_text().as_bytes());
        h.update(&self.weights_bytes());
        h.finish()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let manifest = dir.join(MANIFEST_FILE);
        std::fs::write(&manifest, self.manifest_text()).map_err(Error::io(&manifest))?;
        let weights = dir.join(WEIGHTS_FILE);
        std::fs::write(&weights, self.weights_bytes()).map_err(Error::io(&weights))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&manifest_path).map_err(Error::io(&manifest_path))?;
        let bad = |why: String| Error::corrupt(&manifest_path, why);

        let mut lines = text.lines();
        if lines.next() != Some("NTCK v1") {
            return Err(bad("bad magic line".into()));
        }
        let mut fields: HashMap<&str, &str> = HashMap::new();
        let mut tensor_lines = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("malformed line '{line}'")))?;
            if key == "tensor" {
                tensor_lines.push(value);
            } else {
                fields.insert(key, value);
            }
        }
        if fields.get("dtype") != Some(&"f32") {
            return Err(bad("unsupported dtype".into()));
        }
        let config = ModelConfig::from_lines(|k| fields.get(format!("config.{k}").as_str()).copied())
            .map_err(|e| bad(e.to_string()))?;
        let hash = config.config_hash();
        if fields.get("config_hash") != Some(&hash.as_str()) {
            return Err(bad("config hash does not match config".into()));
        }
        let meta_field = |k: &str| -> Result<&str> {
            fields
                .get(format!("meta.{k}").as_str())
                .copied()
                .ok_or_else(|| bad(format!("missing meta.{k}")))
        };
        let meta = TrainMeta {
            step: meta_field("step")?
                .parse()
                .map_err(|_| bad("bad meta.step".into()))?,
            ordering: meta_field("ordering")?.to_string(),
            tokenizer_hash: meta_field("tokenizer_hash")?.to_string(),
            seed: meta_field("seed")?
                .parse()
                .map_err(|_| bad("bad meta.seed".into()))?,
        };

        let layout = ParamLayout::new(&config);
        if tensor_lines.len() != layout.tensors().len() {
            return Err(bad("tensor list does not match config".into()));
        }
        for (line, spec) in tensor_lines.iter().zip(layout.tensors()) {
            let shape: Vec<String> = spec.shape.iter().map(usize::to_string).collect();
            let want = format!("{} {} {} f32", spec.name, shape.join(","), spec.offset);
            if *line != want {
                return Err(bad(format!("tensor entry '{line}' does not match layout '{want}'")));
            }
        }

        let weights_path = dir.join(WEIGHTS_FILE);
        let blob = std::fs::read(&weights_path).map_err(Error::io(&weights_path))?;
        let bad_blob = |why: &str| Error::corrupt(&weights_path, why);
        let header = 4 + 4 + 64 + 8;
        if blob.len() < header || &blob[..4] != MAGIC {
            return Err(bad_blob("missing NTCK magic"));
        }
        if u32::from_le_bytes(blob[4..8].try_into().unwrap()) != VERSION {
            return Err(bad_blob("unsupported version"));
        }
        if &blob[8..72] != hash.as_bytes() {
            return Err(bad_blob("config hash differs from manifest"));
        }
        let count = u64::from_le_bytes(blob[72..80].try_into().unwrap()) as usize;
        if count != layout.total() {
            return Err(bad_blob("value count does not match layout"));
        }
        if blob.len() != header + count * 4 {
            return Err(bad_blob("truncated or oversized weight data"));
        }
        let data: Vec<T> = blob[header..]
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(bad_blob("non-finite weight"));
        }
        Ok(Checkpoint {
            config,
            params: Params::from_vec(layout, data)?,
            meta,
        })
    }
}
