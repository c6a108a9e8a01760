//! Error type shared by every module in the crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Error raised by construction, shape checks, and numeric guards.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Two tensors or series that must conform do not.
    ShapeMismatch {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A value that must be finite was NaN or infinite.
    NonFinite { context: &'static str },
    /// An argument violated a documented precondition.
    InvalidArgument { context: &'static str, detail: String },
    /// The warping window admits no boundary-to-boundary path.
    WindowTooNarrow { width: usize, rows: usize, cols: usize },
    /// `backward` was called on a non-scalar node.
    NonScalarRoot { shape: Vec<usize> },
    /// `backward` was called twice on the same graph.
    BackwardConsumed,
    /// Batch-norm saw a single element per channel in train mode.
    UndefinedVariance,
    /// A gradient became NaN during an optimizer step.
    NanGradient { parameter: String },
    /// The dataset's class structure cannot produce a requested pair kind.
    DegenerateClasses { detail: String },
    /// A dataset, population, or input collection was empty.
    EmptyInput { context: &'static str },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { context, left, right } => {
                write!(f, "{context}: shape mismatch {left:?} vs {right:?}")
            }
            CoreError::NonFinite { context } => {
                write!(f, "{context}: non-finite value (NaN or Inf)")
            }
            CoreError::InvalidArgument { context, detail } => {
                write!(f, "{context}: {detail}")
            }
            CoreError::WindowTooNarrow { width, rows, cols } => {
                write!(
                    f,
                    "warping window {width} admits no path from (1,1) to ({rows},{cols})"
                )
            }
            CoreError::NonScalarRoot { shape } => {
                write!(f, "backward requires a scalar root, got shape {shape:?}")
            }
            CoreError::BackwardConsumed => {
                write!(f, "backward already ran on this graph")
            }
            CoreError::UndefinedVariance => {
                write!(f, "batch norm in train mode needs at least 2 elements per channel")
            }
            CoreError::NanGradient { parameter } => {
                write!(f, "NaN gradient on parameter `{parameter}`")
            }
            CoreError::DegenerateClasses { detail } => {
                write!(f, "pair sampling impossible: {detail}")
            }
            CoreError::EmptyInput { context } => {
                write!(f, "{context}: empty input")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, CoreError>;
