//! Anterior-mediastinum segmentation: a U-shaped network with an expanding
//! convolution encoder, wide multi-head self-attention, channel depth-wise
//! cross-correlation gating and dilated depth-wise parallel skip paths, built
//! on a small reverse-mode autodiff engine.

pub mod autograd;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use autograd::{ConvGeom, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
