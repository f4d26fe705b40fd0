//! Outlier-separated linear quantization.
//!
//! A tensor is split into the `round(AR·N)` largest-magnitude elements, kept
//! exactly as sparse index/value pairs, and the remaining small elements,
//! which are mapped onto a uniform grid of `2^K` codes spanning `[qmin, qmax]`.
//! Code `c` decodes to
//!
//! ```text
//! level(c) = (qmin·(D − c) + qmax·c) / D,   D = 2^K − 1
//! ```
//!
//! evaluated in `f64` and rounded once to `f32`, so both endpoints are exact
//! levels. In RV-Quant mode `qmin = 0`, code 0 is reserved for exactly-zero
//! (blocked) elements, and value levels are `step, 2·step, …, qmax`.

use std::cmp::Ordering;

use serde::Serialize;

use super::config::{CodecMode, OutlierPrecision, QuantConfig, RangePolicy};
use super::pack::{pack_bits, pack_codes, unpack_bits, unpack_codes};
use crate::error::{Result, VqError};
use crate::tensor::DenseTensor;

/// Result of value profiling.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    /// Smallest selected magnitude, `+∞` when nothing is selected.
    pub threshold: f32,
    /// Selected flat indices, ascending.
    pub indices: Vec<usize>,
}

/// Number of outliers for `n` elements at ratio `ratio`: `round(ratio·n)`,
/// halves rounded away from zero.
pub fn outlier_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).min(n)
}

/// Selects the `round(AR·N)` elements of largest magnitude. Ties at the
/// boundary go to the smaller flat index.
pub fn profile_threshold(t: &DenseTensor, ratio: f64) -> Result<Profile> {
    profile_slice(t.data(), ratio)
}

pub(crate) fn profile_slice(data: &[f32], ratio: f64) -> Result<Profile> {
    if data.is_empty() {
        return Err(VqError::Argument("cannot profile an empty tensor".into()));
    }
    if !(ratio >= 0.0 && ratio < 1.0) {
        return Err(VqError::Argument(format!("ratio must be in [0, 1), got {ratio}")));
    }
    let k = outlier_count(data.len(), ratio);
    if k == 0 {
        return Ok(Profile { threshold: f32::INFINITY, indices: Vec::new() });
    }
    // Larger magnitude first, then smaller index: a strict total order.
    let rank = |&a: &usize, &b: &usize| -> Ordering {
        data[b].abs().total_cmp(&data[a].abs()).then(a.cmp(&b))
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, rank);
    }
    let mut indices = order[..k].to_vec();
    indices.sort_unstable();
    let threshold = indices
        .iter()
        .map(|&i| data[i].abs())
        .min_by(f32::total_cmp)
        .expect("k > 0");
    Ok(Profile { threshold, indices })
}

/// Sparse exact storage for the large elements, in coordinate form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutlierSet {
    indices: Vec<usize>,
    values: Vec<f32>,
    precision: OutlierPrecision,
}

impl OutlierSet {
    pub fn new(indices: Vec<usize>, values: Vec<f32>, precision: OutlierPrecision, n: usize) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(VqError::Format(format!(
                "{} outlier indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(VqError::Format("outlier indices must be strictly increasing".into()));
        }
        if indices.last().is_some_and(|&i| i >= n) {
            return Err(VqError::Format(format!("outlier index out of range for {n} elements")));
        }
        let values = values.into_iter().map(|v| precision.round(v)).collect();
        Ok(Self { indices, values, precision })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn precision(&self) -> OutlierPrecision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f32)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }
}

/// The uniform code grid of one quantized tensor.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Grid {
    qmin: f64,
    qmax: f64,
    max_code: u32,
    min_value_code: u32,
}

impl Grid {
    pub(crate) fn new(cfg: &QuantConfig, qmin: f32, qmax: f32) -> Self {
        Self {
            qmin: qmin as f64,
            qmax: qmax as f64,
            max_code: cfg.max_code(),
            min_value_code: match cfg.mode {
                CodecMode::VQuant => 0,
                CodecMode::RvQuant => 1,
            },
        }
    }

    fn step(&self) -> f64 {
        (self.qmax - self.qmin) / self.max_code as f64
    }

    pub(crate) fn level(&self, code: u32) -> f32 {
        let d = self.max_code as f64;
        let c = code as f64;
        ((self.qmin * (d - c) + self.qmax * c) / d) as f32
    }

    /// Nearest value level; ties go to the smaller-magnitude level, then to
    /// the lower code.
    fn encode(&self, x: f32) -> u32 {
        let step = self.step();
        let guess = if step > 0.0 {
            ((x as f64 - self.qmin) / step).floor()
        } else {
            0.0
        };
        let lo = self.min_value_code as f64;
        let hi = self.max_code as f64;
        let center = guess.clamp(lo, hi) as u32;
        let first = center.saturating_sub(1).max(self.min_value_code);
        let last = (center + 1).min(self.max_code);
        let xd = x as f64;
        let mut best = first;
        let mut best_key = (f64::INFINITY, f64::INFINITY);
        for c in first..=last {
            let lv = self.level(c) as f64;
            let key = ((xd - lv).abs(), lv.abs());
            if key.0 < best_key.0 || (key.0 == best_key.0 && key.1 < best_key.1) {
                best = c;
                best_key = key;
            }
        }
        best
    }
}

/// A tensor in outlier-separated low-precision form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantizedTensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) config: QuantConfig,
    pub(crate) codes: Vec<u8>,
    pub(crate) qmin: f32,
    pub(crate) qmax: f32,
    pub(crate) outliers: OutlierSet,
    pub(crate) relu_mask: Option<Vec<u8>>,
}

impl QuantizedTensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn config(&self) -> &QuantConfig {
        &self.config
    }

    pub fn packed_codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn codes(&self) -> Vec<u8> {
        unpack_codes(&self.codes, self.config.bits, self.len()).expect("codes packed on construction")
    }

    pub fn range(&self) -> (f32, f32) {
        (self.qmin, self.qmax)
    }

    pub fn outliers(&self) -> &OutlierSet {
        &self.outliers
    }

    pub fn relu_mask(&self) -> Option<&[u8]> {
        self.relu_mask.as_deref()
    }

    pub(crate) fn grid(&self) -> Grid {
        Grid::new(&self.config, self.qmin, self.qmax)
    }

    /// Ideal level spacing `(qmax − qmin) / (2^K − 1)`.
    pub fn step(&self) -> f64 {
        self.grid().step()
    }

    /// Worst-case reconstruction error of a small element on the stored `f32`
    /// grid: half the widest gap between adjacent value levels. In RV-Quant
    /// mode an element in `(0, step/2)` is still decoded to the first level,
    /// so the bound there is the first level itself.
    pub fn error_bound(&self) -> f64 {
        let g = self.grid();
        let first = g.min_value_code;
        let mut bound = 0.0f64;
        for c in first..g.max_code {
            let gap = g.level(c + 1) as f64 - g.level(c) as f64;
            bound = bound.max(gap / 2.0);
        }
        if self.config.mode == CodecMode::RvQuant {
            bound = bound.max(g.level(1) as f64);
        }
        bound
    }

    /// Attaches a 1-bit ReLU mask (bit set iff the activation is positive).
    /// Only meaningful for V-Quant; RV-Quant encodes blocking in code 0.
    pub fn with_relu_mask(mut self, original: &DenseTensor) -> Result<Self> {
        if self.config.mode == CodecMode::RvQuant {
            return Err(VqError::Mode("RV-Quant stores no separate ReLU mask".into()));
        }
        if original.shape() != self.shape.as_slice() {
            return Err(VqError::Dimension("mask source shape differs from quantized shape".into()));
        }
        let active: Vec<bool> = original.data().iter().map(|&v| v > 0.0).collect();
        self.relu_mask = Some(pack_bits(&active));
        Ok(self)
    }

    /// Which elements propagate error through a ReLU: the stored mask in
    /// V-Quant mode, non-zero codes (or positive outliers) in RV-Quant mode.
    pub fn active_mask(&self) -> Result<Vec<bool>> {
        match (self.config.mode, &self.relu_mask) {
            (CodecMode::VQuant, Some(mask)) => unpack_bits(mask, self.len()),
            (CodecMode::VQuant, None) => Err(VqError::State(
                "V-Quant tensor carries no ReLU mask".into(),
            )),
            (CodecMode::RvQuant, _) => {
                let mut active: Vec<bool> = self.codes().into_iter().map(|c| c != 0).collect();
                for (i, v) in self.outliers.iter() {
                    active[i] = v > 0.0;
                }
                Ok(active)
            }
        }
    }

    /// Payload size in bits under the cost model: `K` per code, one per mask
    /// bit, and index plus value at outlier precision per outlier.
    pub fn storage_bits(&self) -> u64 {
        let n = self.len() as u64;
        let mask = if self.relu_mask.is_some() { n } else { 0 };
        n * self.config.bits as u64
            + mask
            + 2 * self.outliers.len() as u64 * self.outliers.precision.bits() as u64
    }
}

/// Quantizes `t` under `cfg`. Outliers are selected by [`profile_threshold`];
/// the range of the small region follows `cfg.range_policy`.
pub fn quantize(t: &DenseTensor, cfg: &QuantConfig) -> Result<QuantizedTensor> {
    cfg.validate()?;
    let data = t.data();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(VqError::Numeric(format!("non-finite input at flat index {i}")));
    }
    if cfg.mode == CodecMode::RvQuant {
        if let Some(i) = data.iter().position(|&v| v < 0.0) {
            return Err(VqError::Mode(format!(
                "RV-Quant input must be non-negative, found {} at index {i}",
                data[i]
            )));
        }
    }
    let profile = profile_slice(data, cfg.large_ratio)?;
    let mut is_outlier = vec![false; data.len()];
    for &i in &profile.indices {
        is_outlier[i] = true;
    }
    let small = || data.iter().zip(&is_outlier).filter(|(_, &o)| !o).map(|(&v, _)| v);

    let (qmin, qmax) = if small().next().is_none() {
        (0.0, 0.0)
    } else {
        match cfg.range_policy {
            RangePolicy::Symmetric => {
                let m = small().map(f32::abs).fold(0.0f32, f32::max);
                (-m, m)
            }
            RangePolicy::Asymmetric => small().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            }),
            RangePolicy::Nonnegative => {
                if let Some(v) = small().find(|&v| v < 0.0) {
                    return Err(VqError::Mode(format!(
                        "nonnegative range policy got negative value {v}"
                    )));
                }
                (0.0, small().fold(0.0f32, f32::max))
            }
        }
    };

    let grid = Grid::new(cfg, qmin, qmax);
    let codes: Vec<u8> = data
        .iter()
        .zip(&is_outlier)
        .map(|(&x, &o)| {
            if o || (cfg.mode == CodecMode::RvQuant && x == 0.0) {
                0
            } else {
                grid.encode(x) as u8
            }
        })
        .collect();

    let values = profile.indices.iter().map(|&i| data[i]).collect();
    let outliers = OutlierSet::new(profile.indices, values, cfg.outlier_precision, data.len())?;
    Ok(QuantizedTensor {
        shape: t.shape().to_vec(),
        config: *cfg,
        codes: pack_codes(&codes, cfg.bits)?,
        qmin,
        qmax,
        outliers,
        relu_mask: None,
    })
}

pub fn dequantize(q: &QuantizedTensor) -> DenseTensor {
    let grid = q.grid();
    let levels: Vec<f32> = (0..=grid.max_code).map(|c| grid.level(c)).collect();
    let rv = q.config.mode == CodecMode::RvQuant;
    let mut data: Vec<f32> = q
        .codes()
        .into_iter()
        .map(|c| if rv && c == 0 { 0.0 } else { levels[c as usize] })
        .collect();
    for (i, v) in q.outliers.iter() {
        data[i] = v;
    }
    DenseTensor::new(q.shape.clone(), data).expect("shape preserved")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantError {
    pub mse: f64,
    pub max_abs: f64,
    /// Largest error over non-outlier elements only.
    pub small_max_abs: f64,
}

pub fn quant_error(original: &DenseTensor, q: &QuantizedTensor) -> Result<QuantError> {
    if original.shape() != q.shape() {
        return Err(VqError::Dimension(format!(
            "original shape {:?} differs from quantized shape {:?}",
            original.shape(),
            q.shape()
        )));
    }
    let recon = dequantize(q);
    let mut is_outlier = vec![false; original.len()];
    for &i in q.outliers.indices() {
        is_outlier[i] = true;
    }
    let mut sq = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut small_max_abs = 0.0f64;
    for ((&a, &b), &o) in original.data().iter().zip(recon.data()).zip(&is_outlier) {
        let e = (a as f64 - b as f64).abs();
        sq += e * e;
        max_abs = max_abs.max(e);
        if !o {
            small_max_abs = small_max_abs.max(e);
        }
    }
    Ok(QuantError { mse: sq / original.len() as f64, max_abs, small_max_abs })
}
