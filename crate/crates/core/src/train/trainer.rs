use serde::{Deserialize, Serialize};

use super::backprop::{accuracy_pct, argmax_rows, compute_gradients, infer, sgd_step};
use super::network::MlpNetwork;
use super::schedule::AnnealSchedule;
use crate::data::Dataset;
use crate::error::{Result, VqError};
use crate::report::{EpochRecord, ExperimentReport, RunStatus};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the per-epoch shuffling.
    pub seed: u64,
    pub schedule: AnnealSchedule,
    /// Learning-rate factor applied at each phase boundary: phase `p` trains
    /// at `learning_rate · phase_lr_decay^p`. 1 keeps the rate constant.
    #[serde(default = "unit_decay")]
    pub phase_lr_decay: f32,
}

fn unit_decay() -> f32 {
    1.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(VqError::Parameter(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.phase_lr_decay > 0.0 && self.phase_lr_decay <= 1.0) {
            return Err(VqError::Parameter(format!("phase lr decay must be in (0, 1], got {}", self.phase_lr_decay)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(VqError::Parameter("epochs and batch size must be at least 1".into()));
        }
        if self.schedule.epochs() != self.epochs {
            return Err(VqError::Schedule(format!(
                "schedule covers {} epochs, training runs {}",
                self.schedule.epochs(),
                self.epochs
            )));
        }
        Ok(())
    }
}

pub fn evaluate(net: &MlpNetwork, data: &Dataset) -> Result<f64> {
    let logits = infer(net, data.features())?;
    Ok(accuracy_pct(&argmax_rows(&logits), data.labels()))
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub net: MlpNetwork,
    pub report: ExperimentReport,
}

/// Mini-batch SGD with the schedule's activation storage policy per epoch.
///
/// On divergence the run stops and the report carries the epochs completed
/// so far with a `diverged` status; the returned network is the last finite
/// one.
pub fn train(mut net: MlpNetwork, data: &Dataset, eval: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    if data.dim() != net.input_dim() || data.num_classes() > net.num_classes() {
        return Err(VqError::Dimension(format!(
            "dataset ({} features, {} classes) does not fit network {:?}",
            data.dim(),
            data.num_classes(),
            net.sizes()
        )));
    }
    let mut rng = RngStream::new(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let full_bytes = 4 * cfg.batch_size.min(data.len()) as u64 * net.hidden_widths().iter().sum::<usize>() as u64;
    let mut report = ExperimentReport::new(cfg.seed);

    for epoch in 0..cfg.epochs {
        let (phase, storage) = cfg.schedule.at(epoch).expect("validated coverage");
        let lr = cfg.learning_rate * cfg.phase_lr_decay.powi(phase as i32);
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut measured_bits = 0u64;
        for rows in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch(rows);
            let step = compute_gradients(&net, &x, &y, storage)
                .and_then(|(loss, grads, bits)| sgd_step(&mut net, &grads, lr).map(|()| (loss, bits)));
            match step {
                Ok((loss, bits)) => {
                    loss_sum += loss;
                    batches += 1;
                    measured_bits = measured_bits.max(bits);
                }
                Err(VqError::Numeric(msg)) => {
                    report.status = RunStatus::Diverged { epoch: epoch + 1, message: msg };
                    return Ok(TrainRun { net, report });
                }
                Err(e) => return Err(e),
            }
        }
        let qcfg = storage.config();
        report.records.push(EpochRecord {
            epoch: epoch + 1,
            phase,
            config: storage.to_string(),
            bits: qcfg.map_or(32, |c| c.bits),
            large_ratio: qcfg.map_or(0.0, |c| c.large_ratio),
            mode: qcfg.map_or_else(|| "full".to_string(), |c| c.mode.to_string()),
            learning_rate: lr,
            loss: loss_sum / batches as f64,
            train_acc: evaluate(&net, data)?,
            test_acc: eval.map(|e| evaluate(&net, e)).transpose()?,
            stored_bytes: (storage.memory_fraction() * full_bytes as f64).round() as u64,
            measured_bytes: measured_bits.div_ceil(8),
        });
    }
    Ok(TrainRun { net, report })
}
