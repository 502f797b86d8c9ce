//! Reverse-mode automatic differentiation over dynamically built
//! computation graphs.
//!
//! A [`Tape`] records primitive operations in construction order while the
//! forward values are computed eagerly; [`Tape::backward`] replays the tape
//! in exact reverse order to accumulate gradients. Graphs are rebuilt per
//! instance (one sentence, one tape), which keeps variable-shape tree
//! recursions trivial to express.
//!
//! Two precision modes are supported: [`Precision::Single`] quantizes every
//! forward value to `f32` (the training default), [`Precision::Double`] keeps
//! full `f64` values and is what [`grad_check`] runs in, since central finite
//! differences are unreliable at 32-bit.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Tape, Var};
pub use tensor::{ParamId, ParamStore, Precision, Tensor};

use thiserror::Error;

/// Errors raised while building or differentiating a computation graph.
#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{primitive}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        primitive: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{primitive}: expected {expected}, got shape {got:?}")]
    BadShape {
        primitive: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("tensor values length {values} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, values: usize },
    #[error("dropout rate must be in [0,1), got {0}")]
    InvalidDropoutRate(f64),
    #[error("duplicate parameter name '{0}'")]
    DuplicateParam(String),
    #[error("row {row} out of range for embedding table with {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("class index {class} out of range for distribution of length {len}")]
    ClassOutOfRange { class: usize, len: usize },
    #[error("sum over an empty set has no defined shape")]
    EmptySum,
    #[error("non-finite value encountered in parameter '{param}'")]
    NonFinite { param: String },
}
