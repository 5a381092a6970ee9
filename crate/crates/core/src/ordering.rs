//! Token orderings within a BOS-prefixed window.
//!
//! A [`Permutation`] reorders the `n` real-token positions `1..=n`; position 0
//! (BOS) is never moved. Maps are stored 1-based, `map[i] = σ(i + 1)`, so the
//! permuted stream is `X_0, X_σ(1), ..., X_σ(n)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PermKind {
    Forward,
    Backward,
    /// One seeded uniform permutation shared by every window of an experiment.
    Fixed(u64),
    Explicit,
}

impl PermKind {
    pub fn label(&self) -> String {
        match self {
            PermKind::Forward => "forward".into(),
            PermKind::Backward => "backward".into(),
            PermKind::Fixed(seed) => format!("fixed{seed}"),
            PermKind::Explicit => "explicit".into(),
        }
    }
}

impl fmt::Display for PermKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PermKind::Fixed(seed) => write!(f, "fixed:{seed}"),
            other => f.write_str(&other.label()),
        }
    }
}

impl FromStr for PermKind {
    type Err = Error;

    /// Accepts `forward`, `backward`, `explicit`, `fixed:<seed>` and `fixed<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" | "fwd" => Ok(PermKind::Forward),
            "backward" | "bwd" => Ok(PermKind::Backward),
            "explicit" => Ok(PermKind::Explicit),
            "fixed" | "perm" => Err(Error::invalid("fixed ordering requires a seed")),
            _ => {
                let rest = s
                    .strip_prefix("fixed")
                    .ok_or_else(|| Error::invalid(format!("unknown ordering kind '{s}'")))?;
                let rest = rest.strip_prefix(':').unwrap_or(rest);
                rest.parse::<u64>()
                    .map(PermKind::Fixed)
                    .map_err(|_| Error::invalid(format!("bad fixed-ordering seed in '{s}'")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    map: Vec<u32>,
    kind: PermKind,
}

impl Permutation {
    /// Builds `kind` over `n` positions. `Fixed` carries its seed; `Explicit`
    /// is rejected here since it has no canonical map.
    pub fn make(kind: PermKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("permutation length must be at least 1"));
        }
        let map: Vec<u32> = match kind {
            PermKind::Forward => (1..=n as u32).collect(),
            PermKind::Backward => (1..=n as u32).rev().collect(),
            PermKind::Fixed(seed) => {
                let mut map: Vec<u32> = (1..=n as u32).collect();
                map.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                map
            }
            PermKind::Explicit => {
                return Err(Error::invalid(
                    "explicit permutations are built with Permutation::explicit",
                ))
            }
        };
        Ok(Self { map, kind })
    }

    /// Wraps a 1-based map, checking it is a bijection on `1..=n`.
    pub fn explicit(map: Vec<u32>) -> Result<Self> {
        Self::with_kind(map, PermKind::Explicit)
    }

    fn with_kind(map: Vec<u32>, kind: PermKind) -> Result<Self> {
        let n = map.len();
        if n == 0 {
            return Err(Error::invalid("permutation length must be at least 1"));
        }
        let mut seen = vec![false; n];
        for &target in &map {
            let t = target as usize;
            if t == 0 || t > n {
                return Err(Error::invalid(format!(
                    "permutation target {target} outside 1..={n}"
                )));
            }
            if std::mem::replace(&mut seen[t - 1], true) {
                return Err(Error::invalid(format!("duplicate permutation target {target}")));
            }
        }
        let perm = Self { map, kind };
        match kind {
            PermKind::Forward if !perm.is_identity() => {
                Err(Error::invalid("forward kind requires the identity map"))
            }
            PermKind::Backward if !perm.is_reversal() => {
                Err(Error::invalid("backward kind requires the reversal map"))
            }
            PermKind::Fixed(seed) if Self::make(kind, n)?.map != perm.map => Err(Error::invalid(
                format!("map does not match fixed permutation for seed {seed}"),
            )),
            _ => Ok(perm),
        }
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::make(PermKind::Forward, n)
    }

    pub fn reversal(n: usize) -> Result<Self> {
        Self::make(PermKind::Backward, n)
    }

    pub fn n(&self) -> usize {
        self.map.len()
    }

    pub fn kind(&self) -> PermKind {
        self.kind
    }

    /// 1-based targets: `map()[i] = σ(i + 1)`.
    pub fn map(&self) -> &[u32] {
        &self.map
    }

    /// σ(i) for 1-based `i`.
    pub fn sigma(&self, i: usize) -> usize {
        self.map[i - 1] as usize
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &t)| t as usize == i + 1)
    }

    pub fn is_reversal(&self) -> bool {
        let n = self.map.len();
        self.map.iter().enumerate().all(|(i, &t)| t as usize == n - i)
    }

    pub fn invert(&self) -> Permutation {
        let mut inv = vec![0u32; self.map.len()];
        for (i, &t) in self.map.iter().enumerate() {
            inv[t as usize - 1] = i as u32 + 1;
        }
        let kind = match self.kind {
            PermKind::Forward | PermKind::Backward => self.kind,
            _ if self.is_identity() => PermKind::Forward,
            _ => PermKind::Explicit,
        };
        Permutation { map: inv, kind }
    }

    /// `self ∘ other`: position `i` reads `other` at `self`'s target.
    pub fn compose(&self, other: &Permutation) -> Result<Permutation> {
        if self.n() != other.n() {
            return Err(Error::LengthMismatch {
                expected: self.n(),
                got: other.n(),
            });
        }
        let map = self
            .map
            .iter()
            .map(|&t| other.map[t as usize - 1])
            .collect::<Vec<_>>();
        let kind = if map.iter().enumerate().all(|(i, &t)| t as usize == i + 1) {
            PermKind::Forward
        } else {
            PermKind::Explicit
        };
        Ok(Permutation { map, kind })
    }

    /// Reorders a BOS-prefixed window: output position `j > 0` holds input
    /// position `σ(j)`; position 0 is copied unchanged.
    pub fn apply_to_window<X: Copy>(&self, window: &[X]) -> Result<Vec<X>> {
        if window.len() != self.n() + 1 {
            return Err(Error::LengthMismatch {
                expected: self.n() + 1,
                got: window.len(),
            });
        }
        let mut out = Vec::with_capacity(window.len());
        out.push(window[0]);
        out.extend(self.map.iter().map(|&t| window[t as usize]));
        Ok(out)
    }

    /// Reorders `n` items without a BOS slot: output `i` holds input `σ(i+1) - 1`.
    pub fn apply_to_content<X: Copy>(&self, items: &[X]) -> Result<Vec<X>> {
        if items.len() != self.n() {
            return Err(Error::LengthMismatch {
                expected: self.n(),
                got: items.len(),
            });
        }
        Ok(self.map.iter().map(|&t| items[t as usize - 1]).collect())
    }

    /// `PERM v1 <n> <kind> [seed]` header followed by the 1-based map.
    pub fn to_text(&self) -> String {
        let head = match self.kind {
            PermKind::Fixed(seed) => format!("PERM v1 {} fixed {seed}", self.n()),
            kind => format!("PERM v1 {} {}", self.n(), kind.label()),
        };
        let body = self
            .map
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(" ");
        format!("{head}\n{body}\n")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::invalid("empty permutation file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() < 4 || fields[0] != "PERM" || fields[1] != "v1" {
            return Err(Error::invalid(format!("bad permutation header '{header}'")));
        }
        let n: usize = fields[2]
            .parse()
            .map_err(|_| Error::invalid("bad permutation length"))?;
        let kind = match (fields[3], fields.get(4)) {
            ("fixed", Some(seed)) => PermKind::Fixed(
                seed.parse()
                    .map_err(|_| Error::invalid("bad fixed-permutation seed"))?,
            ),
            ("fixed", None) => return Err(Error::invalid("fixed permutation missing seed")),
            (other, _) => other.parse()?,
        };
        let map = lines
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(|t| {
                t.parse::<u32>()
                    .map_err(|_| Error::invalid(format!("bad permutation entry '{t}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        if map.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: map.len(),
            });
        }
        Self::with_kind(map, kind)
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

    #[test]
    fn forward_and_backward_maps() {
        assert_eq!(Permutation::make(PermKind::Forward, 4).unwrap().map(), &[1, 2, 3, 4]);
        assert_eq!(Permutation::make(PermKind::Backward, 4).unwrap().map(), &[4, 3, 2, 1]);
    }

    #[test]
    fn fixed_is_deterministic() {
        let a = Permutation::make(PermKind::Fixed(7), 4).unwrap();
        let b = Permutation::make(PermKind::Fixed(7), 4).unwrap();
        assert_eq!(a, b);
        let c = Permutation::make(PermKind::Fixed(7), 63).unwrap();
        let d = Permutation::make(PermKind::Fixed(8), 63).unwrap();
        assert_ne!(c.map(), d.map());
    }

    #[test]
    fn fixed_requires_seed() {
        assert!("fixed".parse::<PermKind>().is_err());
        assert_eq!("fixed:7".parse::<PermKind>().unwrap(), PermKind::Fixed(7));
        assert_eq!("fixed7".parse::<PermKind>().unwrap(), PermKind::Fixed(7));
    }

    #[test]
    fn apply_keeps_bos() {
        let w = ['B', 'a', 'b', 'c'];
        let bwd = Permutation::reversal(3).unwrap();
        assert_eq!(bwd.apply_to_window(&w).unwrap(), vec!['B', 'c', 'b', 'a']);
        let fwd = Permutation::identity(3).unwrap();
        assert_eq!(fwd.apply_to_window(&w).unwrap(), w.to_vec());
        assert!(fwd.apply_to_window(&w[..3]).is_err());
    }

    #[test]
    fn inverses() {
        let bwd = Permutation::reversal(6).unwrap();
        assert_eq!(bwd.invert(), bwd);
        let fwd = Permutation::identity(6).unwrap();
        assert_eq!(fwd.invert(), fwd);
        let fixed = Permutation::make(PermKind::Fixed(7), 5).unwrap();
        assert!(fixed.compose(&fixed.invert()).unwrap().is_identity());
        assert!(fixed.invert().compose(&fixed).unwrap().is_identity());
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(Permutation::explicit(vec![1, 1, 3]).is_err());
        assert!(Permutation::explicit(vec![0, 1, 2]).is_err());
        assert!(Permutation::explicit(vec![1, 2, 4]).is_err());
        assert!(Permutation::explicit(vec![]).is_err());
    }

    #[test]
    fn text_round_trip() {
        for kind in [PermKind::Forward, PermKind::Backward, PermKind::Fixed(11)] {
            let p = Permutation::make(kind, 9).unwrap();
            assert_eq!(Permutation::from_text(&p.to_text()).unwrap(), p);
        }
        let p = Permutation::explicit(vec![2, 3, 1]).unwrap();
        assert_eq!(p.to_text(), "PERM v1 3 explicit\n2 3 1\n");
        assert_eq!(Permutation::from_text(&p.to_text()).unwrap(), p);
        assert!(Permutation::from_text("PERM v1 3 forward\n2 3 1\n").is_err());
    }

    proptest! {
        #[test]
        fn inverse_restores_window(seed in any::<u64>(), n in 1usize..40) {
            let p = Permutation::make(PermKind::Fixed(seed), n).unwrap();
            let window: Vec<u32> = (0..=n as u32).map(|x| x * 3 + 1).collect();
            let there = p.apply_to_window(&window).unwrap();
            prop_assert_eq!(there[0], window[0]);
            let back = p.invert().apply_to_window(&there).unwrap();
            prop_assert_eq!(back, window);
        }
    }
}
