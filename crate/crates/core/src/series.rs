//! Time series and their invariants.

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use alloc::string::String;
use alloc::vec::Vec;

/// A length-`I`, dimension-`D` real-valued sequence. Frames are stored
/// row-major (`values[i*D + d]`), so a frame is a contiguous slice.
///
/// Invariants enforced at construction: at least two frames, at least one
/// channel, every value finite.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    len: usize,
    dim: usize,
    /// Class id, when the sample is labeled.
    pub label: Option<usize>,
    /// Stable sample identifier, when the source format provides one.
    pub id: Option<String>,
    /// For verification-style data: `Some(true)` genuine, `Some(false)`
    /// forgery, `None` when the notion does not apply.
    pub genuine: Option<bool>,
}

impl TimeSeries {
    /// Builds a series from row-major frame data.
    pub fn new(values: Vec<f64>, len: usize, dim: usize) -> Result<Self> {
        if len < 2 || dim == 0 {
            return Err(CoreError::InvalidArgument {
                context: "time series",
                detail: alloc::format!("need length >= 2 and dim >= 1, got {len}x{dim}"),
            });
        }
        if values.len() != len * dim {
            return Err(CoreError::ShapeMismatch {
                context: "time series data length",
                left: alloc::vec![len, dim],
                right: alloc::vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite { context: "time series" });
        }
        Ok(Self {
            values,
            len,
            dim,
            label: None,
            id: None,
            genuine: None,
        })
    }

    /// Univariate convenience constructor.
    pub fn univariate(values: Vec<f64>) -> Result<Self> {
        let len = values.len();
        Self::new(values, len, 1)
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn with_genuine(mut self, genuine: bool) -> Self {
        self.genuine = Some(genuine);
        self
    }

    /// Number of frames `I`.
    #[allow(clippy::len_without_is_empty)] // at least 2 frames by construction
    pub fn len(&self) -> usize {
        self.len
    }

    /// Channels per frame `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Frame `i` as a `D`-length slice.
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// The series as an `[I, D]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_raw(alloc::vec![self.len, self.dim], self.values.clone())
    }

    /// Replaces the frame data, keeping metadata. Shape must be preserved.
    pub fn map_values(mut self, f: impl Fn(f64) -> f64) -> Self {
        for v in &mut self.values {
            *v = f(*v);
        }
        self
    }
}
