//! Desk-scale analysis pipeline for microinjection (ICSI) microscopy video
//! frames: a multi-head nested U-Net that emits segmentation masks for the
//! oolemma and suction pipette plus a needle-tip coordinate via a
//! differentiable spatial-to-numerical transform, trained end to end on a
//! from-scratch reverse-mode autodiff engine with the diffGrad optimizer.
//!
//! Everything numeric is generic over [`scalar::Scalar`]; training runs in
//! `f32`, gradient verification in `f64`.

pub mod annot;
pub mod imgproc;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod param;
pub mod pipeline;
pub mod scalar;
pub mod synthgen;
pub mod tensor;

pub use scalar::Scalar;
pub use tensor::{Graph, Tensor, TensorError};

/// Training-precision tensor.
pub type Tensor32 = Tensor<f32>;
/// Verification-precision tensor.
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
