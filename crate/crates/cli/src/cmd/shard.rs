use serde::{Deserialize, Serialize};
use vquant::codec::{QuantConfig, RangePolicy};
use vquant::report::to_csv;
use vquant::rng::{sample, Dist, RngStream};
use vquant::shard::{selection_divergence, Divergence, ShardPlan};
use vquant::DenseTensor;

use crate::cli::ShardsimArgs;
use crate::run::{create_dir, load_config, overlay, to_json, CmdResult, Failure, Run};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShardJob {
    /// `name:p1,p2`, e.g. `laplace:0,1`.
    pub dist: String,
    pub elements: usize,
    pub workers: Vec<usize>,
    pub bits: u8,
    pub ratio: f64,
    pub range_policy: RangePolicy,
    pub sorted: bool,
    pub seed: u64,
}

impl Default for ShardJob {
    fn default() -> Self {
        Self {
            dist: "laplace:0,1".into(),
            elements: 100_000,
            workers: vec![1, 2, 4, 8],
            bits: 3,
            ratio: 0.01,
            range_policy: RangePolicy::Symmetric,
            sorted: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ShardReport {
    pub version: String,
    pub seed: u64,
    pub dist: String,
    pub elements: usize,
    pub bits: u8,
    pub ratio: f64,
    pub sorted: bool,
    pub rows: Vec<Divergence>,
}

pub fn shardsim_cmd(args: &ShardsimArgs, seed: Option<u64>) -> CmdResult {
    let mut job: ShardJob = load_config(args.config.as_deref())?;
    overlay!(job, args; dist, elements, workers, bits, ratio);
    job.sorted |= args.sorted;
    if let Some(s) = seed {
        job.seed = s;
    }
    let mut run = Run::start("shardsim", job.seed);
    if job.workers.is_empty() {
        return Err(Failure::usage("need at least one worker count"));
    }
    if job.elements == 0 {
        return Err(Failure::usage("elements must be at least 1"));
    }
    let dist: Dist = job.dist.parse()?;
    let cfg = QuantConfig::vquant(job.bits, job.ratio, job.range_policy)?;
    let mut t = sample(&dist, &[job.elements], &mut RngStream::new(job.seed))?;
    if job.sorted {
        let mut data = t.into_data();
        data.sort_by(f32::total_cmp);
        t = DenseTensor::vector(data);
    }
    let rows = job
        .workers
        .iter()
        .map(|&w| selection_divergence(&t, &cfg, &ShardPlan::new(w)?))
        .collect::<Result<Vec<_>, _>>()?;

    create_dir(&args.out)?;
    run.write(args.out.join("shardsim.csv"), &to_csv(&rows)?)?;
    let report = ShardReport {
        version: vquant::VERSION.to_string(),
        seed: job.seed,
        dist: dist.to_string(),
        elements: job.elements,
        bits: job.bits,
        ratio: job.ratio,
        sorted: job.sorted,
        rows,
    };
    run.write(args.out.join("shardsim.json"), &to_json(&report))?;
    run.finish(&job, &args.out.join("manifest.json"))
}
