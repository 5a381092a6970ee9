//! Experiment and run directories.
//!
//! ```text
//! <root>/<config-hash>/config.toml
//! <root>/<config-hash>/data/{tokenizer.bpe, train.pkds, validation.pkds, data.txt}
//! <root>/<config-hash>/<ordering>-seed<k>/{checkpoint/, trainlog.csv, ppl.csv, ordering.perm, manifest}
//! ```

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, ensure, Context, Result};
use factorix::eval::{eval_dataset_ppl, records_csv};
use factorix::hash::{content_hash, file_hash};
use factorix::model::{train, Checkpoint};
use factorix::tokenize::{pack_corpus, read_corpus, symbols_to_ids, PackedDataset, Split, Tokenizer, BOS_ID};
use factorix::{Markov, PermKind, Permutation};

use crate::config::{CorpusKind, ExperimentConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RUN_MANIFEST: &str = "manifest";
const LOCK_FILE: &str = ".lock";

/// Exclusive claim on a directory, released on drop.
#[derive(Debug)]
pub struct DirLock(PathBuf);

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "{} is locked by another process (remove {} if it is stale)",
                dir.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("locking {}", dir.display())),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Turns text into token ids the way the experiment's data was produced.
#[derive(Debug, Clone)]
pub enum Codec {
    Bpe(Tokenizer),
    /// Whitespace-separated symbol indices, mapped to ids `symbol + 1`.
    Symbols { count: usize },
}

impl Codec {
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        match self {
            Codec::Bpe(tok) => Ok(tok.encode(text.as_bytes())),
            Codec::Symbols { count } => {
                let symbols = text
                    .split_whitespace()
                    .map(|t| match t.parse::<u32>() {
                        Ok(s) if (s as usize) < *count => Ok(s),
                        _ => Err(anyhow!("'{t}' is not a symbol below {count}")),
                    })
                    .collect::<Result<Vec<u32>>>()?;
                Ok(symbols_to_ids(&symbols))
            }
        }
    }
}

/// Tokenized and packed data shared by every run of an experiment.
#[derive(Debug, Clone)]
pub struct Data {
    pub codec: Codec,
    pub tokenizer_hash: String,
    pub train: PackedDataset,
    pub validation: PackedDataset,
    pub train_hash: String,
    pub validation_hash: String,
}

fn read_record(path: &Path) -> Option<Vec<(String, String)>> {
    let text = fs::read_to_string(path).ok()?;
    Some(
        text.lines()
            .filter_map(|l| l.split_once(' '))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
    )
}

fn lookup<'a>(rows: &'a [(String, String)], key: &str) -> Option<&'a str> {
    rows.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

pub fn markov_source(cfg: &ExperimentConfig) -> Result<Markov> {
    let m = &cfg.corpus.markov;
    Ok(Markov::random(m.order, m.symbols, m.concentration, m.source_seed)?)
}

fn corpus_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut h = factorix::hash::Hasher::new();
    match cfg.corpus.kind {
        CorpusKind::Markov => {
            h.update(b"markov");
            h.update(toml::to_string(&cfg.corpus.markov)?.as_bytes());
        }
        CorpusKind::Text => {
            h.update(b"text");
            h.update(&cfg.corpus.validation_fraction.to_le_bytes());
            for (tag, paths) in [("train", &cfg.corpus.train), ("validation", &cfg.corpus.validation)] {
                h.update(tag.as_bytes());
                h.update(&read_corpus(paths)?);
            }
        }
    }
    h.update(&(cfg.model.window as u64).to_le_bytes());
    h.update(&(cfg.tokenizer.vocab_size as u64).to_le_bytes());
    Ok(h.finish())
}

impl Data {
    /// Loads the data directory when its recorded corpus hash matches,
    /// otherwise rebuilds it.
    fn prepare(cfg: &ExperimentConfig, dir: &Path) -> Result<Self> {
        let _lock = DirLock::acquire(dir)?;
        let corpus = corpus_hash(cfg)?;
        let record = dir.join("data.txt");
        if let Some(rows) = read_record(&record) {
            if lookup(&rows, "corpus_hash") == Some(corpus.as_str()) {
                match Self::load(cfg, dir) {
                    Ok(data) => {
                        log::info!("reusing data in {}", dir.display());
                        return Ok(data);
                    }
                    Err(e) => log::warn!("rebuilding data in {}: {e:#}", dir.display()),
                }
            }
        }
        let data = Self::build(cfg, dir)?;
        let text = format!(
            "corpus_hash {corpus}\ntokenizer_hash {}\ntrain_hash {}\nvalidation_hash {}\n",
            data.tokenizer_hash, data.train_hash, data.validation_hash
        );
        fs::write(&record, text).with_context(|| format!("writing {}", record.display()))?;
        Ok(data)
    }

    fn build(cfg: &ExperimentConfig, dir: &Path) -> Result<Self> {
        let window = cfg.model.window;
        let (codec, tokenizer_hash, train_stream, val_stream, vocab) = match cfg.corpus.kind {
            CorpusKind::Markov => {
                let m = &cfg.corpus.markov;
                let src = markov_source(cfg)?;
                let train = symbols_to_ids(&src.sample_stream(m.train_tokens, m.sample_seed)?);
                let val = symbols_to_ids(&src.sample_stream(m.validation_tokens, m.sample_seed + 1)?);
                let codec = Codec::Symbols { count: m.symbols };
                (codec, src.provenance_hash(), train, val, m.symbols + 1)
            }
            CorpusKind::Text => {
                let text = read_corpus(&cfg.corpus.train)?;
                ensure!(!text.is_empty(), "training corpus is empty");
                log::info!("training tokenizer on {} bytes", text.len());
                let tok = Tokenizer::train(&text, cfg.tokenizer.vocab_size)?;
                tok.save(&dir.join("tokenizer.bpe"))?;
                let mut train = tok.encode(&text);
                let val = if cfg.corpus.validation.is_empty() {
                    let cut = ((1.0 - cfg.corpus.validation_fraction) * train.len() as f64) as usize;
                    train.split_off(cut)
                } else {
                    tok.encode(&read_corpus(&cfg.corpus.validation)?)
                };
                let (hash, vocab) = (tok.content_hash(), tok.vocab_size());
                (Codec::Bpe(tok), hash, train, val, vocab)
            }
        };
        let train = pack_corpus(&train_stream, window, BOS_ID, vocab, &tokenizer_hash, Split::Train)?.dataset;
        let validation = pack_corpus(&val_stream, window, BOS_ID, vocab, &tokenizer_hash, Split::Validation)?.dataset;
        ensure!(!train.is_empty(), "training stream is shorter than one window");
        ensure!(!validation.is_empty(), "validation stream is shorter than one window");
        train.save(&dir.join("train.pkds"))?;
        validation.save(&dir.join("validation.pkds"))?;
        log::info!(
            "packed {} training and {} validation sequences",
            train.len(),
            validation.len()
        );
        Ok(Self {
            codec,
            tokenizer_hash,
            train_hash: train.content_hash(),
            validation_hash: validation.content_hash(),
            train,
            validation,
        })
    }

    fn load(cfg: &ExperimentConfig, dir: &Path) -> Result<Self> {
        let rows = read_record(&dir.join("data.txt")).ok_or_else(|| anyhow!("missing data.txt"))?;
        let want = |k: &str| lookup(&rows, k).map(str::to_string).ok_or_else(|| anyhow!("data.txt lacks {k}"));
        let (codec, tokenizer_hash) = match cfg.corpus.kind {
            CorpusKind::Markov => (
                Codec::Symbols { count: cfg.corpus.markov.symbols },
                markov_source(cfg)?.provenance_hash(),
            ),
            CorpusKind::Text => {
                let tok = Tokenizer::load(&dir.join("tokenizer.bpe"))?;
                let h = tok.content_hash();
                (Codec::Bpe(tok), h)
            }
        };
        ensure!(tokenizer_hash == want("tokenizer_hash")?, "tokenizer hash differs from data.txt");
        let train = PackedDataset::load(&dir.join("train.pkds"))?;
        let validation = PackedDataset::load(&dir.join("validation.pkds"))?;
        let (train_hash, validation_hash) = (train.content_hash(), validation.content_hash());
        ensure!(train_hash == want("train_hash")?, "train.pkds hash differs from data.txt");
        ensure!(validation_hash == want("validation_hash")?, "validation.pkds hash differs from data.txt");
        for d in [&train, &validation] {
            ensure!(d.tokenizer_hash == tokenizer_hash, "packed data was made with another tokenizer");
        }
        Ok(Self {
            codec,
            tokenizer_hash,
            train,
            validation,
            train_hash,
            validation_hash,
        })
    }
}

/// An experiment directory with its prepared data.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    pub data: Data,
}

impl Experiment {
    /// Validates the config, then creates or reuses the experiment directory.
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dir = config.experiment_dir();
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let cfg_path = dir.join("config.toml");
        if !cfg_path.exists() {
            fs::write(&cfg_path, config.to_toml()).with_context(|| format!("writing {}", cfg_path.display()))?;
        }
        let data = Data::prepare(config, &dir.join("data"))?;
        Ok(Self {
            config: config.clone(),
            dir,
            data,
        })
    }

    /// Opens the experiment a run directory belongs to.
    pub fn open_for_run(run_dir: &Path) -> Result<Self> {
        let dir = run_dir
            .parent()
            .ok_or_else(|| anyhow!("{} has no experiment directory", run_dir.display()))?
            .to_path_buf();
        let text = fs::read_to_string(dir.join("config.toml"))
            .with_context(|| format!("{} is not inside an experiment directory", run_dir.display()))?;
        let config: ExperimentConfig = toml::from_str(&text)?;
        let data = Data::load(&config, &dir.join("data")).context("loading experiment data")?;
        Ok(Self { config, dir, data })
    }

    pub fn run_dir(&self, kind: PermKind, seed: u64) -> PathBuf {
        self.dir.join(format!("{}-seed{seed}", kind.label()))
    }

    /// Trains one grid cell. An existing complete run is verified and kept
    /// unless `force` is set.
    pub fn train_run(&self, kind: PermKind, seed: u64, force: bool) -> Result<PathBuf> {
        let dir = self.run_dir(kind, seed);
        let _lock = DirLock::acquire(&dir)?;
        if dir.join(RUN_MANIFEST).exists() {
            if !force {
                RunManifest::load(&dir)?.verify(&dir)?;
                log::info!("{} is complete; pass --force to retrain", dir.display());
                return Ok(dir);
            }
            fs::remove_file(dir.join(RUN_MANIFEST))?;
        }
        for stale in ["checkpoint", "trainlog.csv", "ppl.csv", "ordering.perm"] {
            let p = dir.join(stale);
            if p.is_dir() {
                fs::remove_dir_all(&p)?;
            } else if p.exists() {
                fs::remove_file(&p)?;
            }
        }

        let started = unix_now();
        let model_cfg = self.config.model_config(seed)?;
        let sigma = Permutation::make(kind, model_cfg.window - 1)?;
        let hyper = self.config.optimizer.hyper();
        let init_hash = Checkpoint::<f32>::init(&model_cfg)?.content_hash();
        log::info!("training {}", dir.display());
        let outcome = train::<f32>(&model_cfg, &self.data.train, Some(&self.data.validation), &sigma, &hyper)?;
        let ckpt = outcome.checkpoint;

        ckpt.save(&dir.join("checkpoint"))?;
        write(&dir.join("trainlog.csv"), outcome.log.to_csv())?;
        sigma.save(&dir.join("ordering.perm"))?;
        let records = eval_dataset_ppl(&ckpt, &self.data.validation, &sigma)?;
        write(&dir.join("ppl.csv"), records_csv(&records))?;

        let mut m = RunManifest::default();
        for (k, v) in [
            ("tool_version", TOOL_VERSION.to_string()),
            ("config_hash", self.config.config_hash()),
            ("tokenizer_hash", self.data.tokenizer_hash.clone()),
            ("train_dataset_hash", self.data.train_hash.clone()),
            ("validation_dataset_hash", self.data.validation_hash.clone()),
            ("ordering", kind.label()),
            ("permutation_hash", content_hash(sigma.to_text().as_bytes())),
            ("seed", seed.to_string()),
            ("init_hash", init_hash),
            ("schedule_hash", outcome.schedule_hash),
            ("checkpoint_hash", ckpt.content_hash()),
            ("steps", ckpt.meta.step.to_string()),
            ("started_unix", started.to_string()),
            ("finished_unix", unix_now().to_string()),
        ] {
            m.fields.push((k.to_string(), v));
        }
        for rel in [
            "checkpoint/manifest.txt",
            "checkpoint/weights.bin",
            "trainlog.csv",
            "ppl.csv",
            "ordering.perm",
        ] {
            m.artifacts.push((rel.to_string(), file_hash(&dir.join(rel))?));
        }
        m.write_new(&dir)?;
        Ok(dir)
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Provenance record of a finished run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunManifest {
    pub fields: Vec<(String, String)>,
    /// `(path relative to the run directory, content hash)`.
    pub artifacts: Vec<(String, String)>,
}

const MANIFEST_HEADER: &str = "RUNMANIFEST v1";

impl RunManifest {
    pub fn get(&self, key: &str) -> Option<&str> {
        lookup(&self.fields, key)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n");
        for (k, v) in &self.fields {
            out.push_str(&format!("{k} {v}\n"));
        }
        for (p, h) in &self.artifacts {
            out.push_str(&format!("artifact {p} {h}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        ensure!(lines.next() == Some(MANIFEST_HEADER), "not a run manifest");
        let mut m = Self::default();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(' ').ok_or_else(|| anyhow!("bad manifest line '{line}'"))?;
            if k == "artifact" {
                let (p, h) = v.rsplit_once(' ').ok_or_else(|| anyhow!("bad artifact line '{line}'"))?;
                m.artifacts.push((p.to_string(), h.to_string()));
            } else {
                m.fields.push((k.to_string(), v.to_string()));
            }
        }
        Ok(m)
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(RUN_MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Checks that every named artifact exists with its recorded hash.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for (rel, want) in &self.artifacts {
            let got = file_hash(&run_dir.join(rel)).with_context(|| format!("artifact {rel}"))?;
            ensure!(&got == want, "artifact {rel} in {} changed since the manifest was written", run_dir.display());
        }
        Ok(())
    }

    /// Writes the manifest, refusing to replace an existing one.
    fn write_new(&self, run_dir: &Path) -> Result<()> {
        let tmp = run_dir.join(format!("{RUN_MANIFEST}.tmp"));
        write(&tmp, self.to_text())?;
        let dest = run_dir.join(RUN_MANIFEST);
        ensure!(!dest.exists(), "{} already exists", dest.display());
        fs::rename(&tmp, &dest).with_context(|| format!("writing {}", dest.display()))?;
        let _ = File::open(&dest).and_then(|f| f.sync_all());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffStatus {
    Same,
    Differs,
    /// Timestamps, which never match across runs.
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffRow {
    pub field: String,
    pub a: String,
    pub b: String,
    pub status: DiffStatus,
}

/// Fields that legitimately change when only the ordering changes.
const ORDERING_FIELDS: &[&str] = &[
    "ordering",
    "permutation_hash",
    "checkpoint_hash",
    "artifact:checkpoint/manifest.txt",
    "artifact:checkpoint/weights.bin",
    "artifact:trainlog.csv",
    "artifact:ppl.csv",
    "artifact:ordering.perm",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestDiff {
    pub rows: Vec<DiffRow>,
}

impl ManifestDiff {
    pub fn new(a: &RunManifest, b: &RunManifest) -> Self {
        let flat = |m: &RunManifest| -> Vec<(String, String)> {
            m.fields
                .iter()
                .cloned()
                .chain(m.artifacts.iter().map(|(p, h)| (format!("artifact:{p}"), h.clone())))
                .collect()
        };
        let (fa, fb) = (flat(a), flat(b));
        let mut keys: Vec<&String> = fa.iter().map(|(k, _)| k).collect();
        for (k, _) in &fb {
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let rows = keys
            .into_iter()
            .map(|k| {
                let va = lookup(&fa, k).unwrap_or("").to_string();
                let vb = lookup(&fb, k).unwrap_or("").to_string();
                let status = if k.ends_with("_unix") {
                    DiffStatus::Ignored
                } else if va == vb {
                    DiffStatus::Same
                } else {
                    DiffStatus::Differs
                };
                DiffRow {
                    field: k.clone(),
                    a: va,
                    b: vb,
                    status,
                }
            })
            .collect();
        Self { rows }
    }

    pub fn differing(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|r| r.status == DiffStatus::Differs)
            .map(|r| r.field.as_str())
            .collect()
    }

    pub fn is_same(&self, field: &str) -> bool {
        self.rows.iter().any(|r| r.field == field && r.status == DiffStatus::Same)
    }

    /// True when the runs differ, and only in fields an ordering change
    /// explains.
    pub fn only_ordering_differs(&self) -> bool {
        let d = self.differing();
        d.contains(&"ordering") && d.iter().all(|f| ORDERING_FIELDS.contains(f))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("field,a,b,status\n");
        for r in &self.rows {
            let status = match r.status {
                DiffStatus::Same => "same",
                DiffStatus::Differs => "differs",
                DiffStatus::Ignored => "ignored",
            };
            out.push_str(&format!("{},{},{},{status}\n", r.field, r.a, r.b));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(ordering: &str, ckpt: &str) -> RunManifest {
        RunManifest {
            fields: vec![
                ("config_hash".into(), "c".into()),
                ("ordering".into(), ordering.into()),
                ("schedule_hash".into(), "s".into()),
                ("started_unix".into(), ordering.len().to_string()),
            ],
            artifacts: vec![("checkpoint/weights.bin".into(), ckpt.into())],
        }
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = manifest("forward", "abc");
        assert_eq!(RunManifest::parse(&m.to_text()).unwrap(), m);
        assert!(RunManifest::parse("nope\n").is_err());
    }

    #[test]
    fn diff_attributes_changes_to_ordering() {
        let d = ManifestDiff::new(&manifest("forward", "x"), &manifest("backward", "y"));
        assert!(d.only_ordering_differs());
        assert!(d.is_same("schedule_hash"));
        assert_eq!(d.differing(), vec!["ordering", "artifact:checkpoint/weights.bin"]);

        let mut other = manifest("backward", "y");
        other.fields[2].1 = "t".into();
        assert!(!ManifestDiff::new(&manifest("forward", "x"), &other).only_ordering_differs());
        let same = ManifestDiff::new(&manifest("forward", "x"), &manifest("forward", "x"));
        assert!(!same.only_ordering_differs());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let a = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(a);
        DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn symbol_codec() {
        let c = Codec::Symbols { count: 4 };
        assert_eq!(c.encode("0 3 1").unwrap(), vec![1, 4, 2]);
        assert!(c.encode("0 4").is_err());
    }
}
