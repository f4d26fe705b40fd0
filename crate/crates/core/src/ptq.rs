//! Post-training quantization of a trained MLP, short fine-tuning with
//! full-precision weight updates, and a sweep that picks the smallest
//! bitwidth meeting an accuracy target.
//!
//! Weights are quantized once per refresh (symmetric range, V-Quant).
//! Hidden activations are quantized on the fly from each batch's own
//! distribution (nonnegative range). The network input stays in full
//! precision and biases are not quantized. During fine-tuning both
//! quantizers are treated as the identity on the backward path.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{dequantize, quantize, storage_fraction, CodecMode, OutlierPrecision, QuantConfig, QuantizedTensor, RangePolicy};
use crate::data::Dataset;
use crate::error::{Result, VqError};
use crate::report::RunStatus;
use crate::rng::RngStream;
use crate::tensor::{matmul, matmul_lhs_transposed, DenseTensor};
use crate::train::{
    accuracy_pct, argmax_rows, column_sums, evaluate, linear, mask_in_place, output_delta, relu, sgd_step,
    softmax_cross_entropy, Gradients, MlpNetwork,
};

/// Bit width that means "leave in full precision".
pub const BYPASS_BITS: u8 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceQuantConfig {
    pub weight_bits: u8,
    pub act_bits: u8,
    pub weight_ratio: f64,
    pub act_ratio: f64,
    pub outlier_precision: OutlierPrecision,
}

impl InferenceQuantConfig {
    /// Same bits and ratio for weights and activations, 16-bit outliers.
    pub fn uniform(bits: u8, ratio: f64) -> Result<Self> {
        let c = Self {
            weight_bits: bits,
            act_bits: bits,
            weight_ratio: ratio,
            act_ratio: ratio,
            outlier_precision: OutlierPrecision::F16,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn bypass() -> Self {
        Self::uniform(BYPASS_BITS, 0.0).expect("bypass is valid")
    }

    pub fn validate(&self) -> Result<()> {
        for (what, bits) in [("weight", self.weight_bits), ("activation", self.act_bits)] {
            if !((1..=8).contains(&bits) || bits == BYPASS_BITS) {
                return Err(VqError::Config(format!("{what} bits must be 1..=8 or {BYPASS_BITS}, got {bits}")));
            }
        }
        for (what, r) in [("weight", self.weight_ratio), ("activation", self.act_ratio)] {
            if !(r >= 0.0 && r < 1.0) {
                return Err(VqError::Config(format!("{what} ratio must be in [0, 1), got {r}")));
            }
        }
        Ok(())
    }

    pub fn weight_config(&self) -> Option<QuantConfig> {
        (self.weight_bits != BYPASS_BITS).then(|| QuantConfig {
            bits: self.weight_bits,
            large_ratio: self.weight_ratio,
            mode: CodecMode::VQuant,
            range_policy: RangePolicy::Symmetric,
            outlier_precision: self.outlier_precision,
        })
    }

    pub fn act_config(&self) -> Option<QuantConfig> {
        (self.act_bits != BYPASS_BITS).then(|| QuantConfig {
            bits: self.act_bits,
            large_ratio: self.act_ratio,
            mode: CodecMode::VQuant,
            range_policy: RangePolicy::Nonnegative,
            outlier_precision: self.outlier_precision,
        })
    }

    /// Weight storage relative to 32-bit weights.
    pub fn memory_fraction(&self) -> f64 {
        match self.weight_config() {
            None => 1.0,
            Some(c) => storage_fraction(c.bits as u32, c.large_ratio, c.mode, c.outlier_precision, false),
        }
    }

    pub fn act_memory_fraction(&self) -> f64 {
        match self.act_config() {
            None => 1.0,
            Some(c) => storage_fraction(c.bits as u32, c.large_ratio, c.mode, c.outlier_precision, false),
        }
    }

    pub fn label(&self) -> String {
        format!(
            "w{}a{}/{}%/{}%",
            self.weight_bits,
            self.act_bits,
            self.weight_ratio * 100.0,
            self.act_ratio * 100.0
        )
    }
}

/// A network with statically quantized weights.
#[derive(Debug, Clone)]
pub struct QuantizedModel {
    pub config: InferenceQuantConfig,
    /// Quantized form of each layer's weights; `None` when bypassed.
    pub weights: Vec<Option<QuantizedTensor>>,
    /// The same network with dequantized weights substituted.
    pub effective: MlpNetwork,
}

pub fn quantize_model(net: &MlpNetwork, cfg: &InferenceQuantConfig) -> Result<QuantizedModel> {
    cfg.validate()?;
    let mut effective = net.clone();
    let mut weights = Vec::with_capacity(net.num_layers());
    for layer in effective.layers_mut() {
        match cfg.weight_config() {
            Some(wc) => {
                let q = quantize(&layer.weights, &wc)?;
                layer.weights = dequantize(&q);
                weights.push(Some(q));
            }
            None => weights.push(None),
        }
    }
    Ok(QuantizedModel { config: *cfg, weights, effective })
}

struct QuantTrace {
    /// Input to each layer: the raw batch, then quantized hidden activations.
    inputs: Vec<DenseTensor>,
    /// Active mask of each hidden layer.
    active: Vec<Vec<bool>>,
    logits: DenseTensor,
}

fn quantized_forward(net: &MlpNetwork, act: Option<&QuantConfig>, x: &DenseTensor) -> Result<QuantTrace> {
    if x.rank() != 2 || x.cols() != net.input_dim() {
        return Err(VqError::Dimension(format!(
            "batch {:?} does not match input width {}",
            x.shape(),
            net.input_dim()
        )));
    }
    let layers = net.layers();
    let mut inputs = vec![x.clone()];
    let mut active = Vec::with_capacity(layers.len() - 1);
    for layer in &layers[..layers.len() - 1] {
        let h = relu(linear(inputs.last().expect("non-empty"), layer)?);
        active.push(h.data().iter().map(|&v| v > 0.0).collect());
        let next = match act {
            Some(c) => dequantize(&quantize(&h, c)?),
            None => h,
        };
        inputs.push(next);
    }
    let logits = linear(inputs.last().expect("non-empty"), layers.last().expect("non-empty"))?;
    Ok(QuantTrace { inputs, active, logits })
}

impl QuantizedModel {
    pub fn logits(&self, x: &DenseTensor) -> Result<DenseTensor> {
        Ok(quantized_forward(&self.effective, self.config.act_config().as_ref(), x)?.logits)
    }

    pub fn predict(&self, x: &DenseTensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        Ok(accuracy_pct(&self.predict(data.features())?, data.labels()))
    }
}

/// Loss and full-precision-weight gradients for one batch, with the forward
/// pass running on the quantized view of `net` and the quantizers passed
/// through on the backward path.
pub fn passthrough_gradients(
    net: &MlpNetwork,
    cfg: &InferenceQuantConfig,
    x: &DenseTensor,
    labels: &[usize],
) -> Result<(f64, Gradients)> {
    let model = quantize_model(net, cfg)?;
    let trace = quantized_forward(&model.effective, cfg.act_config().as_ref(), x)?;
    let (loss, probs) = softmax_cross_entropy(&trace.logits, labels)?;
    let layers = model.effective.layers();
    let n = layers.len();
    let mut weights = vec![None; n];
    let mut biases = vec![Vec::new(); n];
    let mut deltas = vec![None; n];
    let mut delta = output_delta(&probs, labels);
    for l in (0..n).rev() {
        weights[l] = Some(matmul_lhs_transposed(&delta, &trace.inputs[l])?);
        biases[l] = column_sums(&delta);
        let prev = if l > 0 {
            let mut p = matmul(&delta, &layers[l].weights)?;
            mask_in_place(&mut p, &trace.active[l - 1]);
            Some(p)
        } else {
            None
        };
        deltas[l] = Some(std::mem::replace(&mut delta, prev.unwrap_or_else(|| DenseTensor::zeros(vec![1]))));
    }
    Ok((
        loss,
        Gradients {
            weights: weights.into_iter().map(Option::unwrap).collect(),
            biases,
            deltas: deltas.into_iter().map(Option::unwrap).collect(),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct FinetuneRun {
    pub net: MlpNetwork,
    /// Mean batch loss per completed epoch.
    pub losses: Vec<f64>,
    pub status: RunStatus,
}

/// Fine-tunes the full-precision weights of `net` through the quantized
/// forward pass. The quantized view is refreshed before every step.
pub fn finetune(net: &MlpNetwork, cfg: &InferenceQuantConfig, data: &Dataset, ft: &FinetuneConfig) -> Result<FinetuneRun> {
    cfg.validate()?;
    if ft.batch_size == 0 || !(ft.learning_rate > 0.0) {
        return Err(VqError::Parameter("fine-tuning needs batch size ≥ 1 and a positive learning rate".into()));
    }
    let mut net = net.clone();
    let mut rng = RngStream::new(ft.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(ft.epochs);
    for epoch in 0..ft.epochs {
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        let mut count = 0usize;
        for rows in order.chunks(ft.batch_size) {
            let (x, y) = data.batch(rows);
            let step = passthrough_gradients(&net, cfg, &x, &y)
                .and_then(|(loss, g)| sgd_step(&mut net, &g, ft.learning_rate).map(|()| loss));
            match step {
                Ok(loss) => {
                    sum += loss;
                    count += 1;
                }
                Err(VqError::Numeric(message)) => {
                    return Ok(FinetuneRun {
                        net,
                        losses,
                        status: RunStatus::Diverged { epoch: epoch + 1, message },
                    })
                }
                Err(e) => return Err(e),
            }
        }
        losses.push(sum / count as f64);
    }
    Ok(FinetuneRun { net, losses, status: RunStatus::Completed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub config: InferenceQuantConfig,
    pub label: String,
    /// Quantized accuracy before fine-tuning.
    pub ptq_accuracy: f64,
    /// Quantized accuracy after fine-tuning.
    pub top1_accuracy: f64,
    pub memory_fraction: f64,
    pub act_memory_fraction: f64,
    pub meets_target: bool,
    pub status: RunStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepOutcome {
    Selected,
    NoneQualify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub float_accuracy: f64,
    pub target_accuracy: f64,
    pub candidates: Vec<CandidateResult>,
    pub outcome: SweepOutcome,
    /// Index of the selected candidate when one qualifies.
    pub selected: Option<usize>,
    /// Index of the most accurate candidate, reported either way.
    pub best: usize,
}

impl SweepResult {
    pub fn selected_candidate(&self) -> Option<&CandidateResult> {
        self.selected.map(|i| &self.candidates[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    /// Allowed drop below float accuracy, in percentage points.
    pub max_drop: f64,
    pub finetune: FinetuneConfig,
}

/// Fine-tunes and evaluates every candidate, then selects the qualifying one
/// with the fewest weight bits, then fewest activation bits, then lowest
/// memory fraction, then earliest position.
pub fn sweep(
    net: &MlpNetwork,
    candidates: &[InferenceQuantConfig],
    settings: &SweepSettings,
    train_data: &Dataset,
    eval_data: &Dataset,
) -> Result<SweepResult> {
    if candidates.is_empty() {
        return Err(VqError::Argument("sweep needs at least one candidate".into()));
    }
    let float_accuracy = evaluate(net, eval_data)?;
    let target_accuracy = float_accuracy - settings.max_drop;
    let results = candidates
        .par_iter()
        .map(|cfg| {
            let ptq_accuracy = quantize_model(net, cfg)?.accuracy(eval_data)?;
            let run = finetune(net, cfg, train_data, &settings.finetune)?;
            let top1_accuracy = quantize_model(&run.net, cfg)?.accuracy(eval_data)?;
            Ok(CandidateResult {
                config: *cfg,
                label: cfg.label(),
                ptq_accuracy,
                top1_accuracy,
                memory_fraction: cfg.memory_fraction(),
                act_memory_fraction: cfg.act_memory_fraction(),
                meets_target: run.status == RunStatus::Completed && top1_accuracy >= target_accuracy,
                status: run.status,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(select(float_accuracy, target_accuracy, results))
}

fn select(float_accuracy: f64, target_accuracy: f64, candidates: Vec<CandidateResult>) -> SweepResult {
    let selected = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.meets_target)
        .min_by(|(i, a), (j, b)| {
            a.config
                .weight_bits
                .cmp(&b.config.weight_bits)
                .then(a.config.act_bits.cmp(&b.config.act_bits))
                .then(a.memory_fraction.total_cmp(&b.memory_fraction))
                .then(i.cmp(j))
        })
        .map(|(i, _)| i);
    let best = candidates
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.top1_accuracy.total_cmp(&b.top1_accuracy).then(j.cmp(i)))
        .map(|(i, _)| i)
        .expect("non-empty");
    SweepResult {
        float_accuracy,
        target_accuracy,
        outcome: if selected.is_some() { SweepOutcome::Selected } else { SweepOutcome::NoneQualify },
        candidates,
        selected,
        best,
    }
}
