//! Hybrid attention separable network for lightweight single-image
//! super-resolution, with its own tensor kernels, reverse-mode autodiff,
//! data pipeline and trainer.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod autograd;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, Result};
pub use params::ParamStore;
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type Checkpoint32 = model::Checkpoint<f32>;
