//! Preprocessing, packaging and evaluation toolkit for 3D pollen
//! classification from widefield z-stacks.
//!
//! The pipeline runs: [`stack::ingest_directory`] -> [`focus::select_focal`]
//! -> [`focus::extract_window`] -> [`canonical::canonicalize`] ->
//! [`split::make_split`] -> [`pack::pack`], after which any trainer (the
//! built-in [`baseline`] or an external deep-learning one) consumes the
//! packed files and emits prediction files scored by [`eval::score`].

pub mod baseline;
pub mod canonical;
pub mod config;
pub mod error;
pub mod eval;
pub mod focus;
pub mod pack;
pub mod pipeline;
pub mod rng;
pub mod split;
pub mod stack;
pub mod synth;

pub use error::{Error, ErrorKind, Result};

/// Side length of the canonical square layer.
pub const CANONICAL_SIZE: usize = 224;
