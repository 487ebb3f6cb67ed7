//! Minimal dense-tensor engine with tape-based reverse-mode differentiation.
//!
//! Covers exactly what a convolutional encoder-decoder needs: same-padded
//! convolutions, ReLU, 2x2 max pooling, nearest-neighbor upsampling, channel
//! concatenation, mean-absolute-error loss, an L1 weight penalty and Adam.
//! Every op is generic over `f32` (training) and `f64` (gradient checking).

mod conv;
mod error;
mod float;
pub mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use error::{Error, Result};
pub use float::Float;
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{adam_step, Adam, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
