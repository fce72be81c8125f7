//! Synthetic datasets, noise injection, metrics, and on-disk formats.

pub mod manifest;
pub mod metrics;
pub mod noise;
pub mod synth;
pub mod tensor_file;

pub use metrics::{index_perplexity, mae, mse, psnr, ssim};
pub use noise::{inject_noise, NoiseMode, NoiseSpec};
pub use synth::{generate, Dataset, SyntheticKind, SyntheticSpec};
pub use tensor_file::{load_tensors, save_tensors, StoredTensor};
