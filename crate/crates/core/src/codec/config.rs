use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VqError};

/// How zero (ReLU-blocked) elements are represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecMode {
    /// Value-aware: all `2^K` codes are value levels; a ReLU mask, when
    /// needed, is stored as a separate bit array.
    VQuant,
    /// ReLU-and-value-aware: code 0 marks a blocked (exactly zero) element and
    /// the remaining `2^K − 1` codes are value levels.
    RvQuant,
}

impl CodecMode {
    pub(crate) fn code(self) -> u8 {
        match self {
            CodecMode::VQuant => 0,
            CodecMode::RvQuant => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(CodecMode::VQuant),
            1 => Some(CodecMode::RvQuant),
            _ => None,
        }
    }
}

impl fmt::Display for CodecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodecMode::VQuant => "vquant",
            CodecMode::RvQuant => "rvquant",
        })
    }
}

/// Range of the small-value region, computed over non-outlier elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangePolicy {
    /// `[−m, m]`, `m` the largest small magnitude.
    Symmetric,
    /// `[min, max]` of the small values.
    Asymmetric,
    /// `[0, max]`; small values must be non-negative.
    Nonnegative,
}

impl RangePolicy {
    pub(crate) fn code(self) -> u8 {
        match self {
            RangePolicy::Symmetric => 0,
            RangePolicy::Asymmetric => 1,
            RangePolicy::Nonnegative => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(RangePolicy::Symmetric),
            1 => Some(RangePolicy::Asymmetric),
            2 => Some(RangePolicy::Nonnegative),
            _ => None,
        }
    }
}

impl fmt::Display for RangePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RangePolicy::Symmetric => "symmetric",
            RangePolicy::Asymmetric => "asymmetric",
            RangePolicy::Nonnegative => "nonnegative",
        })
    }
}

/// Storage precision of the large (outlier) values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutlierPrecision {
    #[serde(rename = "f32")]
    F32,
    /// IEEE binary16, round to nearest even.
    #[serde(rename = "f16")]
    F16,
}

impl OutlierPrecision {
    pub fn bits(self) -> u8 {
        match self {
            OutlierPrecision::F32 => 32,
            OutlierPrecision::F16 => 16,
        }
    }

    pub(crate) fn from_bits(b: u8) -> Option<Self> {
        match b {
            32 => Some(OutlierPrecision::F32),
            16 => Some(OutlierPrecision::F16),
            _ => None,
        }
    }

    pub(crate) fn round(self, v: f32) -> f32 {
        match self {
            OutlierPrecision::F32 => v,
            OutlierPrecision::F16 => half::f16::from_f32(v).to_f32(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    /// Bits per low-precision code, `1..=8`.
    pub bits: u8,
    /// Fraction of elements, by magnitude, kept as exact outliers. `[0, 1)`.
    pub large_ratio: f64,
    pub mode: CodecMode,
    pub range_policy: RangePolicy,
    pub outlier_precision: OutlierPrecision,
}

impl QuantConfig {
    pub fn new(
        bits: u8,
        large_ratio: f64,
        mode: CodecMode,
        range_policy: RangePolicy,
        outlier_precision: OutlierPrecision,
    ) -> Result<Self> {
        let cfg = Self { bits, large_ratio, mode, range_policy, outlier_precision };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn vquant(bits: u8, large_ratio: f64, range_policy: RangePolicy) -> Result<Self> {
        Self::new(bits, large_ratio, CodecMode::VQuant, range_policy, OutlierPrecision::F32)
    }

    /// RV-Quant for post-ReLU data (nonnegative range, 32-bit outliers).
    pub fn rvquant(bits: u8, large_ratio: f64) -> Result<Self> {
        Self::new(bits, large_ratio, CodecMode::RvQuant, RangePolicy::Nonnegative, OutlierPrecision::F32)
    }

    pub fn with_outlier_precision(mut self, p: OutlierPrecision) -> Self {
        self.outlier_precision = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.bits) {
            return Err(VqError::Config(format!("bits must be in 1..=8, got {}", self.bits)));
        }
        if !(self.large_ratio >= 0.0 && self.large_ratio < 1.0) {
            return Err(VqError::Config(format!(
                "large ratio must be in [0, 1), got {}",
                self.large_ratio
            )));
        }
        if self.mode == CodecMode::RvQuant {
            if self.bits < 2 {
                return Err(VqError::Config("RV-Quant needs at least 2 bits".into()));
            }
            if self.range_policy != RangePolicy::Nonnegative {
                return Err(VqError::Config(
                    "RV-Quant requires the nonnegative range policy".into(),
                ));
            }
        }
        Ok(())
    }

    /// Highest code value, `2^K − 1`. Also the number of level intervals.
    pub fn max_code(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    /// Number of distinct value levels: `2^K` (V-Quant) or `2^K − 1` (RV-Quant).
    pub fn value_levels(&self) -> u32 {
        match self.mode {
            CodecMode::VQuant => 1 << self.bits,
            CodecMode::RvQuant => (1 << self.bits) - 1,
        }
    }

    /// Short label such as `3:2` (3 bits, 2 % outliers) or `3:2:v`.
    pub fn label(&self) -> String {
        let pct = self.large_ratio * 100.0;
        match self.mode {
            CodecMode::RvQuant => format!("{}:{}", self.bits, pct),
            CodecMode::VQuant => format!("{}:{}:v", self.bits, pct),
        }
    }
}
