//! Value-aware quantization.
//!
//! Most elements of an activation or weight tensor are small and densely
//! clustered; a few are large. This crate stores the largest `AR` fraction by
//! magnitude exactly, as sparse index/value pairs, and linearly quantizes the
//! remainder at `K` bits over the now much narrower range.
//!
//! - [`tensor`], [`rng`], [`io`]: dense tensors, seeded sampling and the `.vqtn` file format
//! - [`codec`]: profiling, quantize/dequantize, packing, `.vqtq` files, memory cost
//! - [`train`]: MLP training with quantized activation storage
//! - [`shard`]: per-worker outlier selection versus global selection
//! - [`ptq`]: post-training quantization, fine-tuning and configuration sweeps
//! - [`report`]: CSV/JSON experiment records

pub mod codec;
pub mod data;
pub mod error;
pub mod io;
pub mod model_io;
pub mod ptq;
pub mod report;
pub mod rng;
pub mod shard;
pub mod tensor;
pub mod train;

pub use error::{Result, VqError};
pub use tensor::DenseTensor;

/// Toolkit version recorded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
