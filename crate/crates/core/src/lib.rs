//! Diffusion and rectified flow matching on a shared time-conditioned
//! backbone, with path-geometry analysis and sampling benchmarks.

pub mod autograd;
pub mod backbone;
pub mod benchmark;
pub mod data;
pub mod error;
pub mod export;
pub mod geometry;
pub mod kernels;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod samplers;
pub mod schedules;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Scalar, TensorBuf};
pub mod verify;
