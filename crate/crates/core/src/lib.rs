//! Multi-domain neural machine translation adaptation at desk scale.
//!
//! The pipeline: [`corpus`] loading and synthetic domains, [`subword`] BPE
//! and vocabularies, [`ngram`] language models and [`selection`] by
//! cross-entropy difference, the [`nmt`] attention model, [`schedule`]d
//! concatenation / fine-tuning / stacking, [`ensemble`] decoding, [`eval`]
//! metrics and the [`experiments`] finding suite.

pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod exec;
pub mod experiments;
pub mod ngram;
pub mod nmt;
pub mod rng;
pub mod schedule;
pub mod selection;
pub mod subword;

pub use error::{CheckpointError, Error, Result};
pub use exec::Exec;
