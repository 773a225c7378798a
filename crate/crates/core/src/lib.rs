//! Token-level factual inconsistency detection for abstractive summaries.
//!
//! Each summary token is scored by how much its forced-decoding
//! log-probability rises when the summary itself is fed to the encoder as a
//! prompt ahead of the document:
//! `P_diff(y) = log P(y | prompt, doc) − log P(y | doc)`. Tokens the document
//! already supports gain little; unsupported tokens gain a lot.

pub mod backend;
pub mod error;
pub mod evaldata;
pub mod prompts;
pub mod scoring;
pub mod synthetic;
pub mod tuning;

pub use backend::{Backend, DifferentiableBackend, EmbeddingToyBackend, ToyBackend};
pub use error::{Error, Result};
pub use evaldata::{AnnotatedExample, EvaluationReport};
pub use prompts::{PromptSpec, PromptVariant};
pub use scoring::{Category, Scorer, ScoringConfig, ThresholdPolicy, TokenScoreSeq};
pub use tuning::{PromptVector, TuningConfig};
