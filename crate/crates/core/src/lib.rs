//! Core algorithms for deep attentive time warping: classical DTW and
//! soft-DTW, a bipartite attention network with reverse-mode autodiff,
//! contrastive metric-learning losses, training loops, and evaluation
//! statistics (k-NN, EER, McNemar).
//!
//! The crate is `no_std` + `alloc`; IO, file formats, and the CLI live in
//! the companion `attwarp` crate. All floating-point work is `f64` routed
//! through `libm`, and all randomness flows from the seeded [`Rng`]
//! wrapper, so results are reproducible bit-for-bit across platforms.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod attention;
pub mod autodiff;
pub mod data;
pub mod dtw;
pub mod encoder;
pub mod eval;
pub mod loss;
pub mod error;
mod math;
pub mod optim;
pub mod rng;
pub mod sampler;
pub mod series;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, NodeId};
pub use error::{CoreError, Result};
pub use rng::Rng;
pub use series::TimeSeries;
pub use tensor::Tensor;
