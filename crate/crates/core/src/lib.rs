//! Depth- and text-conditioned video diffusion at desk scale.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod autograd;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod optim;
pub mod parallel;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod schedule;
pub mod tensor;
pub mod training;
pub mod vtf;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use mask::AttentionMask;
pub use scalar::Scalar;
pub use schedule::NoiseSchedule;
pub use tensor::Tensor;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Var32 = autograd::Var<f32>;
pub type Var64 = autograd::Var<f64>;
pub type Denoiser32 = denoiser::Denoiser<f32>;
pub type Denoiser64 = denoiser::Denoiser<f64>;
pub type Trainer32 = training::Trainer<f32>;
pub type Trainer64 = training::Trainer<f64>;
pub type VideoSample32 = dataset::VideoSample<f32>;
