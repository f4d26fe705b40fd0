//! Closed-form memory cost of stored activations, as a fraction of 32-bit
//! storage, and a sqrt-segment checkpointing comparator.

use super::config::{CodecMode, OutlierPrecision, QuantConfig};
use crate::error::{Result, VqError};

/// Fraction of full-precision memory used by `bits`-bit codes plus sparse
/// outliers.
///
/// ```text
/// bits/32 + mask/32 + ratio·(2 at f32 outliers | 1 at f16 outliers)
/// ```
///
/// The outlier term charges an index alongside each value (coordinate
/// storage doubles the dense size of the sparse data). `mask` is one bit per
/// element and is only charged for V-Quant with `with_mask`. `bits` may be
/// anything up to 32, so `storage_fraction(32, 0.0, ..)` is exactly 1.
pub fn storage_fraction(
    bits: u32,
    large_ratio: f64,
    mode: CodecMode,
    precision: OutlierPrecision,
    with_mask: bool,
) -> f64 {
    let mask = if with_mask && mode == CodecMode::VQuant { 1.0 } else { 0.0 };
    let outlier_factor = match precision {
        OutlierPrecision::F32 => 2.0,
        OutlierPrecision::F16 => 1.0,
    };
    (bits as f64 + mask) / 32.0 + outlier_factor * large_ratio
}

pub fn memory_fraction(cfg: &QuantConfig, with_mask: bool) -> f64 {
    storage_fraction(cfg.bits as u32, cfg.large_ratio, cfg.mode, cfg.outlier_precision, with_mask)
}

/// Memory reduction factor, `1 / fraction`.
pub fn reduction(fraction: f64) -> f64 {
    1.0 / fraction
}

/// Retained fraction of activation memory under sqrt-segment checkpointing.
///
/// Layers are cut into contiguous segments of `s = round(√N)` layers (the last
/// one may be shorter). The first activation of each segment is retained, and
/// re-computing a segment needs a workspace equal to its whole activation sum;
/// the largest segment sets that workspace. The result is
/// `min(1, (Σ boundaries + max segment) / Σ layers)`: the model never retains
/// more than storing everything. This is a comparator model, not an
/// implementation of recompute-based training.
pub fn checkpoint_fraction(layer_sizes: &[usize]) -> Result<f64> {
    if layer_sizes.is_empty() {
        return Err(VqError::Argument("checkpoint model needs at least one layer".into()));
    }
    let total: usize = layer_sizes.iter().sum();
    if total == 0 {
        return Err(VqError::Argument("layer sizes sum to zero".into()));
    }
    let n = layer_sizes.len();
    let seg = ((n as f64).sqrt().round() as usize).max(1);
    let mut boundaries = 0usize;
    let mut workspace = 0usize;
    for chunk in layer_sizes.chunks(seg) {
        boundaries += chunk[0];
        workspace = workspace.max(chunk.iter().sum());
    }
    Ok(((boundaries + workspace) as f64 / total as f64).min(1.0))
}
