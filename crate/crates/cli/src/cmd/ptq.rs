use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use vquant::codec::OutlierPrecision;
use vquant::data::Dataset;
use vquant::model_io::load_model;
use vquant::ptq::{finetune, quantize_model, sweep, FinetuneConfig, InferenceQuantConfig, SweepResult, SweepSettings};
use vquant::report::{to_csv, RunStatus};
use vquant::train::{evaluate, MlpNetwork};

use crate::cli::{PtqArgs, SweepArgs};
use crate::cmd::train::load_splits;
use crate::run::{create_dir, load_config, overlay, to_json, CmdResult, Failure, Run};

/// Fine-tuning settings shared by `ptq` and `sweep` configs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneJob {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for FinetuneJob {
    fn default() -> Self {
        Self { epochs: 3, learning_rate: 0.01, batch_size: 32 }
    }
}

impl FinetuneJob {
    fn with_seed(self, seed: u64) -> FinetuneConfig {
        FinetuneConfig { epochs: self.epochs, learning_rate: self.learning_rate as f32, batch_size: self.batch_size, seed }
    }
}

fn outlier_precision(bits: u8) -> CmdResult<OutlierPrecision> {
    match bits {
        16 => Ok(OutlierPrecision::F16),
        32 => Ok(OutlierPrecision::F32),
        b => Err(Failure::usage(format!("outlier bits must be 16 or 32, got {b}"))),
    }
}

struct Inputs {
    net: MlpNetwork,
    train: Dataset,
    test: Dataset,
}

fn load_inputs(model: &Option<PathBuf>, data: &Option<PathBuf>) -> CmdResult<Inputs> {
    let model = model.as_ref().ok_or_else(|| Failure::usage("a model directory is required (--model)"))?;
    let data = data.as_ref().ok_or_else(|| Failure::usage("a data directory is required (--data)"))?;
    let net = load_model(model)?;
    let (train, test) = load_splits(data)?;
    let test = test.ok_or_else(|| Failure::usage(format!("{} has no test split", data.display())))?;
    Ok(Inputs { net, train, test })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PtqJob {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub weight_bits: u8,
    pub act_bits: u8,
    pub weight_ratio: f64,
    pub act_ratio: f64,
    pub outlier_bits: u8,
    pub finetune: FinetuneJob,
    pub seed: u64,
}

impl Default for PtqJob {
    fn default() -> Self {
        Self {
            model: None,
            data: None,
            weight_bits: 4,
            act_bits: 4,
            weight_ratio: 0.01,
            act_ratio: 0.01,
            outlier_bits: 16,
            finetune: FinetuneJob::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct PtqReport {
    pub version: String,
    pub seed: u64,
    pub config: InferenceQuantConfig,
    pub label: String,
    pub float_accuracy: f64,
    pub ptq_accuracy: f64,
    pub finetuned_accuracy: f64,
    pub memory_fraction: f64,
    pub act_memory_fraction: f64,
    pub finetune_losses: Vec<f64>,
    pub status: RunStatus,
}

pub fn ptq_cmd(args: &PtqArgs, seed: Option<u64>) -> CmdResult {
    let mut job: PtqJob = load_config(args.config.as_deref())?;
    if let Some(b) = args.bits {
        job.weight_bits = b;
        job.act_bits = b;
    }
    if let Some(r) = args.ratio {
        job.weight_ratio = r;
        job.act_ratio = r;
    }
    if let Some(m) = &args.model {
        job.model = Some(m.clone());
    }
    if let Some(d) = &args.data {
        job.data = Some(d.clone());
    }
    if let Some(e) = args.finetune_epochs {
        job.finetune.epochs = e;
    }
    if let Some(lr) = args.finetune_lr {
        job.finetune.learning_rate = lr;
    }
    if let Some(s) = seed {
        job.seed = s;
    }
    let mut run = Run::start("ptq", job.seed);
    let cfg = InferenceQuantConfig {
        weight_bits: job.weight_bits,
        act_bits: job.act_bits,
        weight_ratio: job.weight_ratio,
        act_ratio: job.act_ratio,
        outlier_precision: outlier_precision(job.outlier_bits)?,
    };
    cfg.validate()?;
    let inputs = load_inputs(&job.model, &job.data)?;
    let float_accuracy = evaluate(&inputs.net, &inputs.test)?;
    let ptq_accuracy = quantize_model(&inputs.net, &cfg)?.accuracy(&inputs.test)?;
    let tuned = finetune(&inputs.net, &cfg, &inputs.train, &job.finetune.with_seed(job.seed))?;
    let finetuned_accuracy = quantize_model(&tuned.net, &cfg)?.accuracy(&inputs.test)?;
    let report = PtqReport {
        version: vquant::VERSION.to_string(),
        seed: job.seed,
        config: cfg,
        label: cfg.label(),
        float_accuracy,
        ptq_accuracy,
        finetuned_accuracy,
        memory_fraction: cfg.memory_fraction(),
        act_memory_fraction: cfg.act_memory_fraction(),
        finetune_losses: tuned.losses,
        status: tuned.status.clone(),
    };
    create_dir(&args.out)?;
    run.write(args.out.join("ptq.json"), &to_json(&report))?;
    run.finish(&job, &args.out.join("manifest.json"))?;
    match tuned.status {
        RunStatus::Completed => Ok(()),
        RunStatus::Diverged { epoch, message } => {
            Err(Failure::numeric(format!("fine-tuning diverged in epoch {epoch}: {message}")))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepJob {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    /// `bits:percent` for weights and activations alike, e.g. `4:1`.
    pub candidates: Vec<String>,
    pub outlier_bits: u8,
    pub max_drop: f64,
    pub finetune: FinetuneJob,
    pub seed: u64,
}

impl Default for SweepJob {
    fn default() -> Self {
        Self {
            model: None,
            data: None,
            candidates: vec!["4:1".into(), "5:1".into(), "8:0".into()],
            outlier_bits: 16,
            max_drop: 1.0,
            finetune: FinetuneJob::default(),
            seed: 0,
        }
    }
}

fn parse_candidate(s: &str, precision: OutlierPrecision) -> CmdResult<InferenceQuantConfig> {
    let bad = || Failure::usage(format!("bad candidate '{s}': expected bits:percent such as 4:1"));
    let (bits, pct) = s.split_once(':').ok_or_else(bad)?;
    let bits: u8 = bits.trim().parse().map_err(|_| bad())?;
    let pct: f64 = pct.trim().parse().map_err(|_| bad())?;
    let mut cfg = InferenceQuantConfig::uniform(bits, pct / 100.0)?;
    cfg.outlier_precision = precision;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct CandidateRow<'a> {
    label: &'a str,
    weight_bits: u8,
    act_bits: u8,
    weight_ratio: f64,
    act_ratio: f64,
    ptq_accuracy: f64,
    top1_accuracy: f64,
    memory_fraction: f64,
    act_memory_fraction: f64,
    meets_target: bool,
    selected: bool,
}

#[derive(Debug, Serialize)]
pub struct SweepReport {
    pub version: String,
    pub seed: u64,
    #[serde(flatten)]
    pub result: SweepResult,
}

pub fn sweep_cmd(args: &SweepArgs, seed: Option<u64>) -> CmdResult {
    let mut job: SweepJob = load_config(args.config.as_deref())?;
    overlay!(job, args; candidates, max_drop);
    if let Some(m) = &args.model {
        job.model = Some(m.clone());
    }
    if let Some(d) = &args.data {
        job.data = Some(d.clone());
    }
    if let Some(e) = args.finetune_epochs {
        job.finetune.epochs = e;
    }
    if let Some(lr) = args.finetune_lr {
        job.finetune.learning_rate = lr;
    }
    if let Some(s) = seed {
        job.seed = s;
    }
    let mut run = Run::start("sweep", job.seed);
    let precision = outlier_precision(job.outlier_bits)?;
    let candidates = job.candidates.iter().map(|c| parse_candidate(c, precision)).collect::<CmdResult<Vec<_>>>()?;
    if candidates.is_empty() {
        return Err(Failure::usage("the sweep needs at least one candidate"));
    }
    if !(job.max_drop >= 0.0) {
        return Err(Failure::usage(format!("max drop must be ≥ 0, got {}", job.max_drop)));
    }
    let inputs = load_inputs(&job.model, &job.data)?;
    let settings = SweepSettings { max_drop: job.max_drop, finetune: job.finetune.with_seed(job.seed) };
    let result = sweep(&inputs.net, &candidates, &settings, &inputs.train, &inputs.test)?;

    let rows: Vec<CandidateRow> = result
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| CandidateRow {
            label: &c.label,
            weight_bits: c.config.weight_bits,
            act_bits: c.config.act_bits,
            weight_ratio: c.config.weight_ratio,
            act_ratio: c.config.act_ratio,
            ptq_accuracy: c.ptq_accuracy,
            top1_accuracy: c.top1_accuracy,
            memory_fraction: c.memory_fraction,
            act_memory_fraction: c.act_memory_fraction,
            meets_target: c.meets_target,
            selected: result.selected == Some(i),
        })
        .collect();
    create_dir(&args.out)?;
    run.write(args.out.join("sweep.csv"), &to_csv(&rows)?)?;
    let report = SweepReport { version: vquant::VERSION.to_string(), seed: job.seed, result };
    run.write(args.out.join("sweep.json"), &to_json(&report))?;
    run.finish(&job, &args.out.join("manifest.json"))
}
