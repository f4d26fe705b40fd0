//! Machine-readable experiment records.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VqError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// 0-based index into the schedule.
    pub phase: usize,
    /// `F` or a schedule token such as `3:2`.
    pub config: String,
    pub bits: u8,
    pub large_ratio: f64,
    pub mode: String,
    pub learning_rate: f32,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    /// Per-step stored-activation bytes from the closed-form cost model.
    pub stored_bytes: u64,
    /// Largest per-step payload actually produced by the codec.
    pub measured_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub seed: u64,
    pub status: RunStatus,
    pub records: Vec<EpochRecord>,
}

impl ExperimentReport {
    pub fn new(seed: u64) -> Self {
        Self { version: crate::VERSION.to_string(), seed, status: RunStatus::Completed, records: Vec::new() }
    }

    pub fn final_record(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> Result<String> {
        to_csv(&self.records)
    }
}

/// Serialises rows with a header line. Nested fields are not supported.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| VqError::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| VqError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| VqError::Format(e.to_string()))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| VqError::Format(e.to_string()))
}
