//! Phase-wise activation storage ("annealing") schedules.
//!
//! The compact notation lists one token per phase, separated by commas:
//! `F` is full precision, `K:P` is RV-Quant with `K` bits and `P` percent
//! outliers, and `K:P:v` is V-Quant with a ReLU mask. `F,3:2,2:0` over 30
//! epochs yields three 10-epoch phases. Epochs are split evenly and the
//! remainder goes to the last phase.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::backprop::ActivationStorage;
use crate::codec::{QuantConfig, RangePolicy};
use crate::error::{Result, VqError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    /// First epoch of the phase, 0-based.
    pub start: usize,
    /// One past the last epoch.
    pub end: usize,
    pub storage: ActivationStorage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    phases: Vec<Phase>,
}

impl AnnealSchedule {
    /// Phases must start at epoch 0, be non-empty and abut one another.
    pub fn new(phases: Vec<Phase>) -> Result<Self> {
        if phases.is_empty() {
            return Err(VqError::Schedule("schedule has no phases".into()));
        }
        let mut expect = 0;
        for (i, p) in phases.iter().enumerate() {
            if p.start != expect || p.end <= p.start {
                return Err(VqError::Schedule(format!(
                    "phase {i} spans {}..{}, expected to start at {expect} and be non-empty",
                    p.start, p.end
                )));
            }
            if let ActivationStorage::Quantized(cfg) = &p.storage {
                cfg.validate()?;
            }
            expect = p.end;
        }
        Ok(Self { phases })
    }

    pub fn constant(storage: ActivationStorage, epochs: usize) -> Result<Self> {
        Self::new(vec![Phase { start: 0, end: epochs, storage }])
    }

    pub fn parse(spec: &str, epochs: usize) -> Result<Self> {
        let storages = spec
            .split(',')
            .map(|tok| parse_token(tok.trim()))
            .collect::<Result<Vec<_>>>()?;
        let count = storages.len();
        if epochs < count {
            return Err(VqError::Schedule(format!(
                "{count} phases cannot be spread over {epochs} epochs"
            )));
        }
        let span = epochs / count;
        let phases = storages
            .into_iter()
            .enumerate()
            .map(|(i, storage)| Phase {
                start: i * span,
                end: if i + 1 == count { epochs } else { (i + 1) * span },
                storage,
            })
            .collect();
        Self::new(phases)
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn epochs(&self) -> usize {
        self.phases.last().map_or(0, |p| p.end)
    }

    /// Phase index and storage policy active at `epoch` (0-based).
    pub fn at(&self, epoch: usize) -> Option<(usize, &ActivationStorage)> {
        self.phases
            .iter()
            .enumerate()
            .find(|(_, p)| (p.start..p.end).contains(&epoch))
            .map(|(i, p)| (i, &p.storage))
    }
}

impl fmt::Display for AnnealSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tokens: Vec<String> = self.phases.iter().map(|p| p.storage.to_string()).collect();
        f.write_str(&tokens.join(","))
    }
}

fn parse_token(tok: &str) -> Result<ActivationStorage> {
    let bad = |why: &str| VqError::Schedule(format!("bad schedule token '{tok}': {why}"));
    if tok.eq_ignore_ascii_case("f") {
        return Ok(ActivationStorage::Full);
    }
    let parts: Vec<&str> = tok.split(':').collect();
    let (bits, pct, vquant) = match parts[..] {
        [b, p] => (b, p, false),
        [b, p, "v"] | [b, p, "V"] => (b, p, true),
        _ => return Err(bad("expected F, K:P or K:P:v")),
    };
    let bits: u8 = bits.parse().map_err(|_| bad("bit width is not an integer"))?;
    let pct: f64 = pct.parse().map_err(|_| bad("ratio is not a number"))?;
    let ratio = pct / 100.0;
    let cfg = if vquant {
        QuantConfig::vquant(bits, ratio, RangePolicy::Nonnegative)
    } else {
        QuantConfig::rvquant(bits, ratio)
    }
    .map_err(|e| bad(&e.to_string()))?;
    Ok(ActivationStorage::Quantized(cfg))
}
