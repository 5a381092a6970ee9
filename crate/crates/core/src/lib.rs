//! Factorization-order consistency lab.
//!
//! Sequence perplexity is a function of the joint probability alone, so every
//! chain-rule factorization order recovers the same value. This crate checks
//! that statement exactly on small tabular models ([`probcore`]), trains
//! miniature decoder-only transformers on forward, backward and permuted
//! windows ([`model`]), and measures how far trained models drift from the
//! invariance ([`diagnostics`], [`eval`]).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the precision used by default.

pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod hash;
pub mod model;
pub mod ordering;
pub mod probcore;
pub mod scalar;
pub mod tokenize;

pub use error::{Error, Result};
pub use ordering::{PermKind, Permutation};
pub use scalar::Scalar;

/// Exact tabular distribution in double precision.
pub type Tabular = probcore::TabularDistribution<f64>;
/// Markov source in double precision.
pub type Markov = probcore::MarkovSource<f64>;
/// Training-precision transformer checkpoint.
pub type Checkpoint32 = model::Checkpoint<f32>;
/// Double-precision transformer checkpoint, used for gradient checks.
pub type Checkpoint64 = model::Checkpoint<f64>;
/// Training-precision forward trace.
pub type Trace32 = model::ForwardTrace<f32>;
/// Attention tensor as stored in `ATTN` files.
pub type Attention32 = model::AttentionTensor<f32>;
/// Hidden-state tensor as stored in `HIDN` files.
pub type Hidden32 = model::HiddenTensor<f32>;
