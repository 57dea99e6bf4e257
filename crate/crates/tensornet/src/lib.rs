//! A closed-set, hand-differentiated convolutional network engine.
//!
//! The layer vocabulary is deliberately small: 2-D convolution, batch
//! normalization, ReLU, 2×2 max pooling, nearest-neighbour 2× upsampling,
//! channel concatenation with an earlier layer, and sigmoid. That is enough
//! to express a DnCNN-style residual extractor and a small U-Net. Every
//! layer has an analytic backward pass that is checked against central
//! finite differences in the test suite.
//!
//! Tensors are generic over [`Scalar`] so the same code runs in `f32` for
//! training/inference and in `f64` for gradient verification. Reductions
//! (batch statistics, losses, weight gradients) accumulate in `f64`.

mod error;
mod layers;
pub mod loss;
mod network;
mod optim;
mod scalar;
mod spec;
mod tensor;

pub use error::{NetError, Result};
pub use network::{Forward, Gradients, Mode, Network};
pub use optim::{AdamConfig, AdamState};
pub use scalar::Scalar;
pub use spec::{LayerSpec, NetworkSpec};
pub use tensor::{Shape, Tensor};
