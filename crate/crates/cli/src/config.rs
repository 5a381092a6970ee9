//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use factorix::hash::content_hash;
use factorix::model::{BosMode, Hyper, ModelConfig};
use factorix::PermKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    /// UTF-8 text files, tokenized with a BPE trained on the training files.
    Text,
    /// Symbols sampled from a seeded random Markov source.
    Markov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovSection {
    pub order: usize,
    pub symbols: usize,
    /// Dirichlet concentration of each transition row.
    pub concentration: f64,
    pub source_seed: u64,
    pub train_tokens: usize,
    pub validation_tokens: usize,
    /// The validation stream uses `sample_seed + 1`.
    pub sample_seed: u64,
}

impl Default for MarkovSection {
    fn default() -> Self {
        Self {
            order: 2,
            symbols: 32,
            concentration: 0.2,
            source_seed: 1,
            train_tokens: 1_800_000,
            validation_tokens: 200_000,
            sample_seed: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub kind: CorpusKind,
    pub train: Vec<PathBuf>,
    /// When empty, the tail `validation_fraction` of the training stream is
    /// held out instead.
    pub validation: Vec<PathBuf>,
    pub validation_fraction: f64,
    pub markov: MarkovSection,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            kind: CorpusKind::Markov,
            train: Vec::new(),
            validation: Vec::new(),
            validation_fraction: 0.1,
            markov: MarkovSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    /// Upper bound on the BPE vocabulary, BOS included. Ignored for Markov
    /// corpora, whose vocabulary is `symbols + 1`.
    pub vocab_size: usize,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        Self { vocab_size: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub window: usize,
    pub init_std: f64,
    /// `softmax-mask` or `loss-only`.
    pub bos_mode: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            layers: m.layers,
            heads: m.heads,
            dim: m.dim,
            window: m.window,
            init_std: m.init_std,
            bos_mode: m.bos_mode.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub lr: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub log_every: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let h = Hyper::desk();
        Self {
            lr: h.lr,
            batch_size: h.batch_size,
            grad_accum: h.grad_accum,
            warmup_frac: h.warmup_frac,
            weight_decay: h.weight_decay,
            epochs: h.epochs,
            beta1: h.beta1,
            beta2: h.beta2,
            eps: h.eps,
            log_every: h.log_every,
        }
    }
}

impl OptimizerSection {
    pub fn hyper(&self) -> Hyper {
        Hyper {
            lr: self.lr,
            batch_size: self.batch_size,
            grad_accum: self.grad_accum,
            warmup_frac: self.warmup_frac,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            log_every: self.log_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Any of `forward`, `backward`, `fixed:<seed>`.
    pub orderings: Vec<String>,
    /// Model initialization seeds.
    pub seeds: Vec<u64>,
    /// Overridden by `FACTORIX_OUT`.
    pub output_root: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            orderings: vec!["forward".into(), "backward".into(), "fixed:1".into()],
            seeds: vec![0, 1, 2],
            output_root: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub entropy: bool,
    pub rank: bool,
    pub rsa: bool,
    pub stats: bool,
    /// Validation sequences used for attention and RSA measurements.
    pub sequences: usize,
}

impl DiagnosticsSection {
    /// Metric names switched on, in reporting order.
    pub fn enabled(&self) -> Vec<&'static str> {
        [("entropy", self.entropy), ("rank", self.rank), ("rsa", self.rsa), ("stats", self.stats)]
            .into_iter()
            .filter_map(|(name, on)| on.then_some(name))
            .collect()
    }
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            entropy: true,
            rank: true,
            rsa: true,
            stats: true,
            sequences: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub corpus: CorpusSection,
    pub tokenizer: TokenizerSection,
    pub model: ModelSection,
    pub optimizer: OptimizerSection,
    pub diagnostics: DiagnosticsSection,
}

/// The sections that determine the trained models, hashed into the
/// experiment directory name.
#[derive(Serialize)]
struct Identity<'a> {
    corpus: &'a CorpusSection,
    tokenizer: &'a TokenizerSection,
    model: &'a ModelSection,
    optimizer: &'a OptimizerSection,
}

impl ExperimentConfig {
    /// Reads a config and resolves corpus paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.corpus.train.iter_mut().for_each(resolve);
        cfg.corpus.validation.iter_mut().for_each(resolve);
        if cfg.experiment.output_root.is_relative() {
            cfg.experiment.output_root = base.join(&cfg.experiment.output_root);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn config_hash(&self) -> String {
        let id = Identity {
            corpus: &self.corpus,
            tokenizer: &self.tokenizer,
            model: &self.model,
            optimizer: &self.optimizer,
        };
        content_hash(toml::to_string(&id).expect("config serializes").as_bytes())
    }

    /// `FACTORIX_OUT` when set, else the configured root.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os("FACTORIX_OUT") {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.experiment.output_root.clone(),
        }
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.output_root().join(&self.config_hash()[..16])
    }

    pub fn orderings(&self) -> Result<Vec<PermKind>> {
        self.experiment
            .orderings
            .iter()
            .map(|s| {
                let kind: PermKind = s.parse()?;
                match kind {
                    PermKind::Forward | PermKind::Backward | PermKind::Fixed(_) => Ok(kind),
                    other => bail!("ordering '{other}' cannot be trained; use forward, backward or fixed:<seed>"),
                }
            })
            .collect()
    }

    pub fn bos_mode(&self) -> Result<BosMode> {
        Ok(self.model.bos_mode.parse()?)
    }

    pub fn vocab_size(&self) -> usize {
        match self.corpus.kind {
            CorpusKind::Text => self.tokenizer.vocab_size,
            CorpusKind::Markov => self.corpus.markov.symbols + 1,
        }
    }

    /// Model configuration for one seed. For text corpora the tokenizer may
    /// stop short of `vocab_size`; the model keeps the configured size.
    pub fn model_config(&self, seed: u64) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            layers: self.model.layers,
            heads: self.model.heads,
            dim: self.model.dim,
            window: self.model.window,
            vocab_size: self.vocab_size(),
            init_std: self.model.init_std,
            seed,
            bos_mode: self.bos_mode()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked before any computation.
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.experiment.orderings.is_empty(), "config lists no orderings");
        ensure!(!self.experiment.seeds.is_empty(), "config lists no seeds");
        self.orderings()?;
        self.model_config(0)?;
        self.optimizer.hyper().validate()?;
        ensure!(self.diagnostics.sequences > 0, "diagnostics.sequences must be positive");
        match self.corpus.kind {
            CorpusKind::Text => {
                ensure!(!self.corpus.train.is_empty(), "text corpus lists no training files");
                for p in self.corpus.train.iter().chain(&self.corpus.validation) {
                    ensure!(p.is_file(), "corpus file {} does not exist", p.display());
                }
                if self.corpus.validation.is_empty() {
                    let f = self.corpus.validation_fraction;
                    ensure!(f > 0.0 && f < 1.0, "validation_fraction must lie in (0, 1)");
                }
                ensure!(
                    self.tokenizer.vocab_size > factorix::tokenize::BASE_VOCAB + 1,
                    "tokenizer vocab_size must exceed {}",
                    factorix::tokenize::BASE_VOCAB + 1
                );
            }
            CorpusKind::Markov => {
                let m = &self.corpus.markov;
                ensure!(m.symbols >= 2, "Markov source needs at least 2 symbols");
                ensure!(m.concentration > 0.0, "Markov concentration must be positive");
                ensure!(
                    m.train_tokens >= self.model.window - 1 && m.validation_tokens >= self.model.window - 1,
                    "Markov streams must hold at least one window"
                );
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
        assert_eq!(cfg.model_config(3).unwrap().vocab_size, 33);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: ExperimentConfig = toml::from_str("[model]\nlayers = 3\n").unwrap();
        assert_eq!(cfg.model.layers, 3);
        assert_eq!(cfg.model.dim, 64);
        assert!(toml::from_str::<ExperimentConfig>("[model]\nlayer = 3\n").is_err());
    }

    #[test]
    fn hash_ignores_grid_and_output() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.experiment.seeds = vec![9];
        b.experiment.output_root = "elsewhere".into();
        assert_eq!(a.config_hash(), b.config_hash());
        b.optimizer.lr = 1e-3;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn validation_catches_bad_grid_and_missing_files() {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.orderings = vec!["sideways".into()];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.corpus.kind = CorpusKind::Text;
        cfg.corpus.train = vec!["/nonexistent/corpus.txt".into()];
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("does not exist"), "{err}");
    }
}
