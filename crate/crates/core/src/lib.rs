//! Low-bit quantization of linear layers with activation-outlier smoothing
//! and a 16-bit low-rank branch.
//!
//! A layer `X W` is rebuilt as `X̂ L1 L2 + Q(X̂) Q(R)`: per-channel
//! smoothing moves activation outliers into the weight, a truncated SVD
//! peels the dominant directions of the smoothed weight into a 16-bit
//! branch, and only the flattened residual is stored in 4- or 8-bit codes.
//! The crate also ships the diagnostics used to validate the scheme
//! (error-bound checks, spectrum reports, a six-scheme comparison ladder),
//! an analytic cost model for fused versus unfused branch execution, and
//! bit-exact serialization for tensors and layer packs.
//!
//! Everything computes in `f64` with fixed reduction orders, so identical
//! inputs produce identical bytes on every run.

pub mod costmodel;
pub mod diagnostics;
pub mod error;
pub mod gptq;
pub mod io;
pub mod linalg;
pub mod minifloat;
pub mod pipeline;
pub mod quant;
pub mod rng;
pub mod selftest;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
