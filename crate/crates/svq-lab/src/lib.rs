//! Sparse vector quantization laboratory.
//!
//! The crate implements, end to end and on the CPU:
//!
//! * an exact sparse-regression quantizer (ISTA / FISTA / one-step closed
//!   form) and its differentiable two-layer-MLP counterpart ("SVQ"),
//! * a zoo of lookup-based vector quantizers (EMA-VQ, residual, grouped,
//!   multi-head, stochastic, FSQ, LFQ and residual stacks),
//! * a minimal reverse-mode autodiff tape,
//! * a toy encoder-translator-decoder forecaster for spatio-temporal frames,
//! * synthetic data, forecasting metrics, a binary tensor file format,
//! * and a deterministic CSV-emitting experiment harness with a CLI.
//!
//! The numeric core is generic over the element type ([`scalar::Scalar`],
//! implemented for `f32`/`f64`); the aliases below fix the defaults used
//! everywhere else in the crate.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiments;
pub mod forecaster;
pub mod init;
pub mod quantizers;
pub mod rng;
pub mod scalar;
pub mod solver;
pub mod svq;
pub mod tensor;
pub(crate) mod util;

pub use error::{Error, Result};

/// Default 64-bit tensor used by all model and solver code.
pub type Tensor = tensor::Tensor<f64>;
/// 32-bit tensor, used only at the file-format boundary.
pub type Tensor32 = tensor::Tensor<f32>;
