//! Token-level negation-scope labeling over dependency-parsed sentences.
//!
//! Given a sentence, its dependency tree and a gold negation cue, the models
//! in this crate predict which tokens fall inside the cue's scope:
//!
//! * a sequential BiLSTM over the token sequence,
//! * a bidirectional dependency LSTM (child-sum bottom-up pass coupled with
//!   a top-down pass) over the tree,
//! * a gated graph convolutional network over the tree with
//!   direction-specific weights and label features,
//! * and a per-token confidence-voting ensemble of any two of them.
//!
//! Everything runs on a small reverse-mode autodiff tape ([`autodiff`]);
//! corpora are read from the tab-separated NSF format ([`corpus`]); word
//! embeddings can be composed cross-lingually from a translation-probability
//! table ([`embeddings`]). The `negscope` binary exposes training,
//! prediction, ensembling, evaluation, analysis and synthetic-corpus
//! generation as subcommands.

pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod embeddings;
pub mod ensemble;
pub mod evaluation;
pub mod models;
pub mod synth;
pub mod training;

pub use autodiff::AutodiffError;

use thiserror::Error;

/// Crate-level error, aggregating the per-module error types.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Parse(#[from] corpus::ParseError),
    #[error(transparent)]
    Tree(#[from] corpus::TreeError),
    #[error(transparent)]
    Embedding(#[from] embeddings::EmbeddingError),
    #[error(transparent)]
    Ensemble(#[from] ensemble::EnsembleError),
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
    #[error("{0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
