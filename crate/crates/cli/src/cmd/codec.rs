use serde::Serialize;
use vquant::codec::{
    checkpoint_fraction, dequantize, memory_fraction, quant_error, quantize, read_quantized, reduction,
    storage_fraction, write_quantized, CodecMode, OutlierPrecision, QuantConfig, RangePolicy,
};
use vquant::io::{read_tensor, write_tensor};
use vquant::report::to_csv;

use crate::cli::{DequantizeArgs, MemtableArgs, ModeArg, QuantizeArgs, RangeArg};
use crate::run::{to_json, CmdResult, Failure, Run};

fn precision(bits: u8) -> OutlierPrecision {
    if bits == 16 {
        OutlierPrecision::F16
    } else {
        OutlierPrecision::F32
    }
}

#[derive(Debug, Serialize)]
struct QuantizeConfigEcho<'a> {
    input: String,
    output: String,
    codec: &'a QuantConfig,
    mask: bool,
}

#[derive(Debug, Serialize)]
pub struct QuantizeSummary {
    pub elements: usize,
    pub outliers: usize,
    pub mse: f64,
    pub max_abs: f64,
    pub small_max_abs: f64,
    pub memory_fraction: f64,
}

pub fn quantize_cmd(args: &QuantizeArgs, seed: u64) -> CmdResult {
    let mode = match args.mode {
        ModeArg::V => CodecMode::VQuant,
        ModeArg::Rv => CodecMode::RvQuant,
    };
    let range = match (args.range, mode) {
        (Some(RangeArg::Symmetric), _) => RangePolicy::Symmetric,
        (Some(RangeArg::Asymmetric), _) => RangePolicy::Asymmetric,
        (Some(RangeArg::Nonnegative), _) | (None, CodecMode::RvQuant) => RangePolicy::Nonnegative,
        (None, CodecMode::VQuant) => RangePolicy::Symmetric,
    };
    let cfg = QuantConfig::new(args.bits, args.ratio, mode, range, precision(args.outlier_bits))?;
    if args.mask && mode == CodecMode::RvQuant {
        return Err(Failure::usage("--mask applies to v mode only; rv encodes zeros in its codes"));
    }
    let mut run = Run::start("quantize", seed);
    let t = read_tensor(&args.input)?;
    let mut q = quantize(&t, &cfg)?;
    if args.mask {
        q = q.with_relu_mask(&t)?;
    }
    write_quantized(&args.output, &q)?;
    run.record(args.output.clone());
    let err = quant_error(&t, &q)?;
    let summary = QuantizeSummary {
        elements: t.len(),
        outliers: q.outliers().len(),
        mse: err.mse,
        max_abs: err.max_abs,
        small_max_abs: err.small_max_abs,
        memory_fraction: memory_fraction(&cfg, args.mask),
    };
    print!("{}", to_json(&summary));
    if let Some(path) = &args.manifest {
        let echo = QuantizeConfigEcho {
            input: args.input.display().to_string(),
            output: args.output.display().to_string(),
            codec: &cfg,
            mask: args.mask,
        };
        run.finish(&echo, path)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct DequantizeSummary {
    elements: usize,
    outliers: usize,
    bits: u8,
    mse: Option<f64>,
    max_abs: Option<f64>,
    small_max_abs: Option<f64>,
}

pub fn dequantize_cmd(args: &DequantizeArgs, seed: u64) -> CmdResult {
    let mut run = Run::start("dequantize", seed);
    let q = read_quantized(&args.input)?;
    let t = dequantize(&q);
    write_tensor(&args.output, &t)?;
    run.record(args.output.clone());
    let err = match &args.compare {
        Some(path) => Some(quant_error(&read_tensor(path)?, &q)?),
        None => None,
    };
    let summary = DequantizeSummary {
        elements: t.len(),
        outliers: q.outliers().len(),
        bits: q.config().bits,
        mse: err.map(|e| e.mse),
        max_abs: err.map(|e| e.max_abs),
        small_max_abs: err.map(|e| e.small_max_abs),
    };
    print!("{}", to_json(&summary));
    if let Some(path) = &args.manifest {
        let echo = serde_json::json!({
            "input": args.input.display().to_string(),
            "output": args.output.display().to_string(),
            "compare": args.compare.as_ref().map(|p| p.display().to_string()),
        });
        run.finish(&echo, path)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct MemRow {
    bits: u32,
    ratio: f64,
    mode: String,
    memory_fraction: f64,
    reduction: f64,
    checkpoint_fraction: f64,
}

pub fn memtable_cmd(args: &MemtableArgs, seed: u64) -> CmdResult {
    let mut run = Run::start("memtable", seed);
    if args.bits.is_empty() || args.ratios.is_empty() || args.modes.is_empty() {
        return Err(Failure::usage("memtable needs at least one bit width, ratio and mode"));
    }
    if args.checkpoint_layers == 0 {
        return Err(Failure::usage("--checkpoint-layers must be at least 1"));
    }
    let checkpoint = checkpoint_fraction(&vec![1; args.checkpoint_layers])?;
    let outlier = precision(args.outlier_bits);
    let mut rows = Vec::new();
    for &bits in &args.bits {
        for &ratio in &args.ratios {
            if !(0.0..1.0).contains(&ratio) {
                return Err(Failure::usage(format!("ratio must be in [0, 1), got {ratio}")));
            }
            for mode in &args.modes {
                let (codec, mask) = match mode.as_str() {
                    "vmask" => (CodecMode::VQuant, true),
                    "v" | "none" => (CodecMode::VQuant, false),
                    "rv" => (CodecMode::RvQuant, false),
                    other => return Err(Failure::usage(format!("unknown mode '{other}' (vmask, v, rv, none)"))),
                };
                if codec == CodecMode::RvQuant && bits < 2 {
                    return Err(Failure::usage("rv needs at least 2 bits"));
                }
                let f = storage_fraction(bits, ratio, codec, outlier, mask);
                rows.push(MemRow {
                    bits,
                    ratio,
                    mode: mode.clone(),
                    memory_fraction: f,
                    reduction: reduction(f),
                    checkpoint_fraction: checkpoint,
                });
            }
        }
    }
    let csv = to_csv(&rows)?;
    match &args.output {
        Some(path) => run.write(path.clone(), &csv)?,
        None => print!("{csv}"),
    }
    if let Some(m) = &args.manifest {
        let echo = serde_json::json!({
            "bits": args.bits,
            "ratios": args.ratios,
            "modes": args.modes,
            "outlier_bits": args.outlier_bits,
            "checkpoint_layers": args.checkpoint_layers,
        });
        run.finish(&echo, m)?;
    }
    Ok(())
}
