//! Desk-scale reindex-then-adapt conversational recommendation.
//!
//! The pipeline squeezes multi-token item titles inside a small decoder-only
//! language model into single-token item embeddings (the reindex step), which
//! makes full-catalog scoring a single matrix-vector product, and then adapts
//! the resulting recommendation distribution toward a target platform with
//! bias terms or gating against a traditional recommender (the adapt step).

pub mod adapt;
pub mod catalog;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod lm;
pub mod pipeline;
pub mod recsys;
pub mod reindex;
pub mod tensor;
pub mod tokenizer;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RtaError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("catalog error: {0}")]
    Catalog(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
