use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hash::content_hash;

/// How BOS is kept out of the next-token distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BosMode {
    /// BOS logit set to −∞, so every predictive distribution covers real
    /// tokens only.
    #[default]
    SoftmaxMask,
    /// BOS stays in the softmax; it is only ever excluded as a target.
    LossOnly,
}

impl fmt::Display for BosMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BosMode::SoftmaxMask => "softmax-mask",
            BosMode::LossOnly => "loss-only",
        })
    }
}

impl FromStr for BosMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax-mask" => Ok(BosMode::SoftmaxMask),
            "loss-only" => Ok(BosMode::LossOnly),
            other => Err(Error::invalid(format!("unknown BOS mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub window: usize,
    pub vocab_size: usize,
    pub init_std: f64,
    pub seed: u64,
    pub bos_mode: BosMode,
}

impl Default for ModelConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            dim: 64,
            window: 64,
            vocab_size: 512,
            init_std: 0.02,
            seed: 0,
            bos_mode: BosMode::SoftmaxMask,
        }
    }
}

impl ModelConfig {
    /// The configuration used for finite-difference gradient checks.
    pub fn tiny() -> Self {
        Self {
            layers: 1,
            heads: 1,
            dim: 8,
            window: 8,
            vocab_size: 11,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.dim == 0 {
            return Err(Error::invalid("layers, heads and dim must be positive"));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.window < 2 {
            return Err(Error::invalid("window must be at least 2"));
        }
        if self.vocab_size < 2 {
            return Err(Error::invalid("vocab_size must be at least 2"));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::invalid("init_std must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// `key = value` lines, in a fixed order.
    pub fn to_lines(&self) -> Vec<(String, String)> {
        vec![
            ("layers".into(), self.layers.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("dim".into(), self.dim.to_string()),
            ("window".into(), self.window.to_string()),
            ("vocab_size".into(), self.vocab_size.to_string()),
            ("init_std".into(), format!("{:?}", self.init_std)),
            ("seed".into(), self.seed.to_string()),
            ("bos_mode".into(), self.bos_mode.to_string()),
        ]
    }

    pub fn from_lines<'a>(mut get: impl FnMut(&str) -> Option<&'a str>) -> Result<Self> {
        fn field<'a, X: FromStr>(
            get: &mut impl FnMut(&str) -> Option<&'a str>,
            key: &str,
        ) -> Result<X> {
            let raw = get(key).ok_or_else(|| Error::invalid(format!("missing config key '{key}'")))?;
            raw.parse()
                .map_err(|_| Error::invalid(format!("bad value '{raw}' for '{key}'")))
        }
        let cfg = Self {
            layers: field(&mut get, "layers")?,
            heads: field(&mut get, "heads")?,
            dim: field(&mut get, "dim")?,
            window: field(&mut get, "window")?,
            vocab_size: field(&mut get, "vocab_size")?,
            init_std: field(&mut get, "init_std")?,
            seed: field(&mut get, "seed")?,
            bos_mode: field(&mut get, "bos_mode")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn config_hash(&self) -> String {
        let text: String = self
            .to_lines()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        content_hash(text.as_bytes())
    }
}
