//! Rank-correlation knowledge distillation.
//!
//! The crate provides a differentiable Spearman correlation loss built on an
//! exact soft-rank operator (permutahedron projection via isotonic
//! regression), the feature and response imitation losses it is usually
//! combined with, feature-statistics diagnostics, and a small synthetic
//! cross-modal distillation harness.
//!
//! Everything is computed in `f64` on dense row-major tensors; tensors can be
//! exchanged through the SKDT file format in [`skdt`].

pub mod analyzer;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod rng;
pub mod skdt;
pub mod softrank;
pub mod stats;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
pub use losses::{FeatureMap, FeaturePyramid, HeadPredictionSet, LossResult};
pub use rng::SeededRng;
pub use tensor::Tensor;
