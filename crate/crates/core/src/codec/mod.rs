//! The value-aware codec: outlier profiling, K-bit quantization, packing,
//! serialization and the memory-cost accountant.

mod config;
mod cost;
mod file;
mod pack;
mod quantizer;

pub use config::{CodecMode, OutlierPrecision, QuantConfig, RangePolicy};
pub use cost::{checkpoint_fraction, memory_fraction, reduction, storage_fraction};
pub use file::{decode_quantized, encode_quantized, read_quantized, write_quantized, QUANT_MAGIC, QUANT_VERSION};
pub use pack::{pack_bits, pack_codes, packed_len, unpack_bits, unpack_codes};
pub use quantizer::{
    dequantize, outlier_count, profile_threshold, quant_error, quantize, OutlierSet, Profile, QuantError,
    QuantizedTensor,
};
