//! Few-shot segmentation with wavelet-domain feature augmentation and
//! cross-attention fusion.
//!
//! The numeric core is generic over the element type ([`Scalar`]: `f32` or
//! `f64`). Training runs in `f32`; gradient checks use `f64`. Concrete aliases
//! for both live at the crate root.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod scalar;
pub mod selftest;
pub mod tensor;
pub mod trainer;
pub mod viz;
pub mod wavelet;

pub use autodiff::{BinaryKind, Tape, Var};
pub use error::{Error, Result};
pub use ops::activation::Unary;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
