//! Config-driven orchestration of factorix experiments: tokenizer training,
//! packing, grid training over orderings and seeds, diagnostics, 2AFC
//! benchmarks and exact invariance checks.

mod cli;
pub mod commands;
pub mod config;
pub mod run;

pub use cli::execute;
