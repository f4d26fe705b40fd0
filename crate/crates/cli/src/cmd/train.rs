use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vquant::data::{split, Dataset, TaskSpec, TOY_SIZES};
use vquant::model_io::save_model;
use vquant::report::RunStatus;
use vquant::rng::RngStream;
use vquant::train::{train, AnnealSchedule, MlpNetwork, TrainConfig};

use crate::cli::{GenDataArgs, TaskArg, TrainArgs};
use crate::run::{create_dir, load_config, overlay, to_json, CmdResult, Failure, Run};

/// Loads `train` and, when present, `test` splits from a gen-data directory.
pub fn load_splits(dir: &Path) -> CmdResult<(Dataset, Option<Dataset>)> {
    let train = Dataset::load(dir, "train")?;
    let test = if dir.join("test.x.vqtn").exists() { Some(Dataset::load(dir, "test")?) } else { None };
    Ok((train, test))
}

#[derive(Debug, Serialize)]
struct GenDataEcho {
    task: TaskSpec,
    train_fraction: f64,
    out: String,
}

pub fn gen_data_cmd(args: &GenDataArgs, seed: u64) -> CmdResult {
    let mut run = Run::start("gen-data", seed);
    let task = match args.task {
        TaskArg::Toy => match TaskSpec::toy() {
            TaskSpec::Digits { per_class, noise } => TaskSpec::Digits {
                per_class: args.per_class.unwrap_or(per_class),
                noise: args.noise.unwrap_or(noise),
            },
            other => other,
        },
        TaskArg::Digits => TaskSpec::Digits { per_class: args.per_class.unwrap_or(100), noise: args.noise.unwrap_or(0.3) },
        TaskArg::Blobs => TaskSpec::Blobs {
            classes: args.classes,
            dim: args.dim,
            per_class: args.per_class.unwrap_or(100),
            separation: args.separation,
        },
    };
    if !(args.train_fraction > 0.0 && args.train_fraction <= 1.0) {
        return Err(Failure::usage(format!("train fraction must be in (0, 1], got {}", args.train_fraction)));
    }
    let data = task.generate(seed)?;
    let (train_set, test_set) = split(&data, args.train_fraction);
    create_dir(&args.out)?;
    train_set.save(&args.out, "train")?;
    for f in ["train.x.vqtn", "train.y.vqtn"] {
        run.record(args.out.join(f));
    }
    if !test_set.is_empty() {
        test_set.save(&args.out, "test")?;
        for f in ["test.x.vqtn", "test.y.vqtn"] {
            run.record(args.out.join(f));
        }
    }
    let echo = GenDataEcho { task, train_fraction: args.train_fraction, out: args.out.display().to_string() };
    run.finish(&echo, &args.out.join("manifest.json"))
}

/// Training job as read from a JSON config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainJob {
    /// gen-data directory; when absent `task` is generated in memory.
    pub data: Option<PathBuf>,
    pub task: TaskSpec,
    /// Seed for generating `task`; defaults to the run seed.
    pub data_seed: Option<u64>,
    pub train_fraction: f64,
    pub hidden: Vec<usize>,
    pub schedule: String,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub phase_lr_decay: f64,
    pub seed: u64,
}

impl Default for TrainJob {
    fn default() -> Self {
        Self {
            data: None,
            task: TaskSpec::toy(),
            data_seed: None,
            train_fraction: 0.8,
            hidden: TOY_SIZES[1..TOY_SIZES.len() - 1].to_vec(),
            schedule: "F".into(),
            epochs: 30,
            learning_rate: 0.1,
            batch_size: 32,
            phase_lr_decay: 1.0,
            seed: 0,
        }
    }
}

pub fn train_cmd(args: &TrainArgs, seed: Option<u64>) -> CmdResult {
    let mut job: TrainJob = load_config(args.config.as_deref())?;
    overlay!(job, args; schedule, epochs, learning_rate, batch_size, phase_lr_decay, hidden);
    if let Some(d) = &args.data {
        job.data = Some(d.clone());
    }
    if let Some(s) = seed {
        job.seed = s;
    }
    let mut run = Run::start("train", job.seed);

    let (train_set, test_set) = match &job.data {
        Some(dir) => load_splits(dir)?,
        None => {
            let data = job.task.generate(job.data_seed.unwrap_or(job.seed))?;
            let (a, b) = split(&data, job.train_fraction);
            (a, (!b.is_empty()).then_some(b))
        }
    };
    let classes = train_set.num_classes().max(test_set.as_ref().map_or(0, Dataset::num_classes));
    let mut sizes = vec![train_set.dim()];
    sizes.extend(&job.hidden);
    sizes.push(classes);
    let net = MlpNetwork::init(&sizes, &mut RngStream::new(job.seed))?;
    let schedule = AnnealSchedule::parse(&job.schedule, job.epochs)?;
    let cfg = TrainConfig {
        learning_rate: job.learning_rate as f32,
        batch_size: job.batch_size,
        epochs: job.epochs,
        seed: job.seed,
        schedule,
        phase_lr_decay: job.phase_lr_decay as f32,
    };
    let result = train(net, &train_set, test_set.as_ref(), &cfg)?;

    create_dir(&args.out)?;
    run.write(args.out.join("report.json"), &to_json(&result.report))?;
    run.write(args.out.join("report.csv"), &result.report.to_csv()?)?;
    if let Some(dir) = &args.save_model {
        create_dir(dir)?;
        save_model(dir, &result.net)?;
        run.record(dir.join("manifest.json"));
    }
    run.finish(&job, &args.out.join("manifest.json"))?;
    match result.report.status {
        RunStatus::Completed => Ok(()),
        RunStatus::Diverged { epoch, message } => {
            Err(Failure::numeric(format!("training diverged in epoch {epoch}: {message}")))
        }
    }
}
