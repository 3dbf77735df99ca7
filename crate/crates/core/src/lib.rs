//! Trimodal contrastive learning with the triangular area loss.
//!
//! The numeric modules are generic over [`Scalar`]; the aliases below fix the
//! element type to `f64`, which is what training and the experiment presets
//! use.

pub mod diagnostics;
pub mod encoders;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod modalities;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Graph = tensor::Graph<f64>;
pub type Gradients = tensor::Gradients<f64>;
