//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Runs without the libtest harness so the
//! lines are always shown.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use vquant::codec::{dequantize, memory_fraction, quant_error, quantize, reduction, QuantConfig, RangePolicy};
use vquant::data::Dataset;
use vquant::model_io::load_model;
use vquant::ptq::{finetune, quantize_model, sweep, FinetuneConfig, InferenceQuantConfig, SweepSettings};
use vquant::rng::{sample, Dist, RngStream};
use vquant::shard::{local_quantize, selection_divergence, ShardPlan};
use vquant::train::{compute_gradients, evaluate, train, ActivationStorage, AnnealSchedule, MlpNetwork, TrainConfig};
use vquant::DenseTensor;

type Outcome = Result<String, String>;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn toy_data() -> (Dataset, Dataset) {
    let dir = root().join("data/toy");
    (Dataset::load(&dir, "train").unwrap(), Dataset::load(&dir, "test").unwrap())
}

fn ensure(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn memory_arithmetic() -> Outcome {
    let v = memory_fraction(&QuantConfig::vquant(3, 0.02, RangePolicy::Nonnegative).unwrap(), true);
    let rv = memory_fraction(&QuantConfig::rvquant(3, 0.02).unwrap(), false);
    // Hand arithmetic: (3 + 1)/32 + 2·0.02 and 3/32 + 2·0.02.
    let ok = (v - 0.165).abs() <= 1e-6
        && (rv - 0.13375).abs() <= 1e-6
        && format!("{:.2}", reduction(v)) == "6.06"
        && format!("{:.2}", reduction(rv)) == "7.48"
        && format!("{:.1}", reduction(v)) == "6.1"
        && format!("{:.1}", reduction(rv)) == "7.5";
    ensure(ok, format!("vmask {v} ({:.2}x), rv {rv} ({:.2}x)", reduction(v), reduction(rv)))
}

fn codec_bounds() -> Outcome {
    let dists = [
        Dist::Lognormal { mu: 0.0, sigma: 1.0 },
        Dist::Laplace { loc: 0.0, scale: 1.0 },
        Dist::Gaussian { mean: 0.0, std: 1.0 },
    ];
    let n = 100_000;
    let mut cases = 0;
    for (s, dist) in dists.iter().enumerate() {
        let t = sample(dist, &[n], &mut RngStream::new(7 + s as u64)).unwrap();
        for bits in 1..=4u8 {
            for pct in 0..=3 {
                let ratio = pct as f64 / 100.0;
                let q = quantize(&t, &QuantConfig::vquant(bits, ratio, RangePolicy::Symmetric).unwrap()).unwrap();
                let expected = (ratio * n as f64).round() as usize;
                if q.outliers().len() != expected {
                    return Err(format!("{dist} K={bits} AR={ratio}: {} outliers, want {expected}", q.outliers().len()));
                }
                let d = dequantize(&q);
                let outliers: HashSet<usize> = q.outliers().indices().iter().copied().collect();
                let (lo, hi) = q.range();
                let step = (hi as f64 - lo as f64) / ((1u32 << bits) - 1) as f64;
                // One f32 rounding of the stored level on top of half a step.
                let tol = step / 2.0 + f32::EPSILON as f64 * lo.abs().max(hi.abs()) as f64;
                for (i, (&x, &y)) in t.data().iter().zip(d.data()).enumerate() {
                    let bad = if outliers.contains(&i) { x != y } else { (x as f64 - y as f64).abs() > tol };
                    if bad {
                        return Err(format!("{dist} K={bits} AR={ratio} element {i}: {x} -> {y}"));
                    }
                }
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} (dist, K, AR) cases on {n} elements"))
}

fn vquant_beats_linear() -> Outcome {
    let mut wins = 0;
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let t = sample(&Dist::Lognormal { mu: 0.0, sigma: 1.0 }, &[100_000], &mut RngStream::new(300 + seed)).unwrap();
        for bits in 2..=4u8 {
            let mse = |ratio: f64| {
                let q = quantize(&t, &QuantConfig::vquant(bits, ratio, RangePolicy::Symmetric).unwrap()).unwrap();
                quant_error(&t, &q).unwrap().mse
            };
            let plain = mse(0.0);
            for ratio in [0.01, 0.02] {
                let v = mse(ratio);
                worst = worst.max(v / plain);
                if v < plain {
                    wins += 1;
                }
            }
        }
    }
    ensure(wins == 30, format!("{wins}/30 cases, worst mse ratio {worst:.4}"))
}

fn delta_invariance() -> Outcome {
    let net = MlpNetwork::init(&[8, 16, 12, 4], &mut RngStream::new(3)).unwrap();
    let x = sample(&Dist::Gaussian { mean: 0.0, std: 1.0 }, &[20, 8], &mut RngStream::new(4)).unwrap();
    let y: Vec<usize> = (0..20).map(|i| i % 4).collect();
    let (_, reference, _) = compute_gradients(&net, &x, &y, &ActivationStorage::Full).unwrap();
    let policies = [
        QuantConfig::rvquant(2, 0.0).unwrap(),
        QuantConfig::rvquant(3, 0.02).unwrap(),
        QuantConfig::vquant(2, 0.0, RangePolicy::Nonnegative).unwrap(),
        QuantConfig::vquant(3, 0.02, RangePolicy::Nonnegative).unwrap(),
    ];
    let hidden = reference.deltas.len() - 1;
    for cfg in policies {
        let (_, g, _) = compute_gradients(&net, &x, &y, &ActivationStorage::Quantized(cfg)).unwrap();
        for (l, (a, b)) in reference.deltas[..hidden].iter().zip(&g.deltas[..hidden]).enumerate() {
            let same = a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits());
            if !same {
                return Err(format!("layer {l} deltas differ under {}", cfg.label()));
            }
        }
    }
    Ok(format!("{hidden} hidden layers bitwise equal under F and 4 quantized policies"))
}

type RefNet = Vec<(Vec<Vec<f64>>, Vec<f64>)>;

fn as_f64(net: &MlpNetwork) -> RefNet {
    net.layers()
        .iter()
        .map(|l| {
            let w = (0..l.fan_out()).map(|r| l.weights.row(r).iter().map(|&v| v as f64).collect()).collect();
            (w, l.bias.iter().map(|&v| v as f64).collect())
        })
        .collect()
}

/// Returns the mean cross-entropy and the smallest hidden |pre-activation|.
fn reference_forward(layers: &RefNet, x: &[Vec<f64>], y: &[usize]) -> (f64, f64) {
    let mut total = 0.0;
    let mut margin = f64::INFINITY;
    for (row, &label) in x.iter().zip(y) {
        let mut a = row.clone();
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z: Vec<f64> =
                w.iter().zip(b).map(|(wr, bj)| wr.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>() + bj).collect();
            if l + 1 < layers.len() {
                margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        total += m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - a[label];
    }
    (total / x.len() as f64, margin)
}

fn gradient_check() -> Outcome {
    let h = 1e-3;
    let y = vec![0, 1, 1, 0, 1];
    let rows = |x: &DenseTensor| (0..x.rows()).map(|r| x.row(r).iter().map(|&v| v as f64).collect()).collect::<Vec<Vec<f64>>>();
    // A draw whose units sit clear of the ReLU kink, so ±h never flips one.
    let (net, x) = (0..100)
        .map(|s| {
            let net = MlpNetwork::init(&[3, 4, 3, 2], &mut RngStream::new(s)).unwrap();
            let x = sample(&Dist::Gaussian { mean: 0.0, std: 1.0 }, &[5, 3], &mut RngStream::new(1000 + s)).unwrap();
            (net, x)
        })
        .find(|(n, x)| reference_forward(&as_f64(n), &rows(x), &y).1 > 0.05)
        .ok_or("no kink-free draw")?;
    let x64 = rows(&x);
    let base = as_f64(&net);
    let (_, grads, _) = compute_gradients(&net, &x, &y, &ActivationStorage::Full).unwrap();
    let analytic = grads.flat();
    let mut index = 0;
    let mut worst = 0.0f64;
    for l in 0..base.len() {
        let (out, inp) = (base[l].0.len(), base[l].0[0].len());
        let coords = (0..out).flat_map(|r| (0..inp).map(move |c| (r, Some(c)))).chain((0..out).map(|r| (r, None)));
        for (r, c) in coords {
            let bump = |d: f64| {
                let mut p = base.clone();
                match c {
                    Some(c) => p[l].0[r][c] += d,
                    None => p[l].1[r] += d,
                }
                reference_forward(&p, &x64, &y).0
            };
            let numeric = (bump(h) - bump(-h)) / (2.0 * h);
            let g = analytic[index] as f64;
            worst = worst.max((g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-4));
            index += 1;
        }
    }
    ensure(
        index == analytic.len() && net.num_params() <= 50 && worst <= 1e-3,
        format!("{} parameters, worst relative error {worst:.2e}", net.num_params()),
    )
}

fn toy_train(schedule: &str, decay: f32, seed: u64, data: &(Dataset, Dataset)) -> f64 {
    let net = MlpNetwork::init(&vquant::data::TOY_SIZES, &mut RngStream::new(seed)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.1,
        batch_size: 32,
        epochs: 30,
        seed,
        schedule: AnnealSchedule::parse(schedule, 30).unwrap(),
        phase_lr_decay: decay,
    };
    let run = train(net, &data.0, Some(&data.1), &cfg).unwrap();
    evaluate(&run.net, &data.1).unwrap()
}

fn training_parity() -> Outcome {
    let data = toy_data();
    let float: Vec<f64> = (0..3).map(|s| toy_train("F", 1.0, s, &data)).collect();
    let quant: Vec<f64> = (0..3).map(|s| toy_train("3:2", 1.0, s, &data)).collect();
    let (f, q) = (mean(&float), mean(&quant));
    ensure(f - q <= 1.0, format!("float {f:.2} vs rv 3-bit/2% {q:.2} (gap {:.2})", f - q))
}

fn annealing_direction() -> Outcome {
    let data = toy_data();
    let forward: Vec<f64> = (0..3).map(|s| toy_train("F,3:2,2:0", 0.1, s, &data)).collect();
    let reverse: Vec<f64> = (0..3).map(|s| toy_train("2:0,3:2,F", 0.1, s, &data)).collect();
    let (a, b) = (mean(&forward), mean(&reverse));
    ensure(a >= b, format!("F->3:2->2:0 {a:.2} vs 2:0->3:2->F {b:.2}"))
}

fn shard_regression() -> Outcome {
    let t = sample(&Dist::Laplace { loc: 0.0, scale: 1.0 }, &[100_000], &mut RngStream::new(2024)).unwrap();
    let cfg = QuantConfig::vquant(3, 0.01, RangePolicy::Symmetric).unwrap();
    let global = dequantize(&quantize(&t, &cfg).unwrap());
    let single = local_quantize(&t, &cfg, &ShardPlan::new(1).unwrap()).unwrap();
    let identical = single.reconstruction.data().iter().zip(global.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    let d4 = selection_divergence(&t, &cfg, &ShardPlan::new(4).unwrap()).unwrap();
    let ratio = d4.mse_ratio.ok_or("global mse is zero")?;
    ensure(identical && ratio < 1.5, format!("W=1 bit-exact: {identical}; W=4 mse_ratio {ratio:.5} (< 1.5)"))
}

fn ptq_finetune() -> Outcome {
    let net = load_model(root().join("models/toy")).unwrap();
    let (train_set, test_set) = toy_data();
    let float = evaluate(&net, &test_set).unwrap();
    let cfg = InferenceQuantConfig::uniform(4, 0.01).unwrap();
    let candidates: Vec<InferenceQuantConfig> =
        [(4, 0.01), (5, 0.01), (8, 0.0)].iter().map(|&(b, r)| InferenceQuantConfig::uniform(b, r).unwrap()).collect();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..3u64 {
        let ft = FinetuneConfig { epochs: 3, learning_rate: 0.01, batch_size: 32, seed };
        let tuned = finetune(&net, &cfg, &train_set, &ft).unwrap();
        let acc = quantize_model(&tuned.net, &cfg).unwrap().accuracy(&test_set).unwrap();
        let result = sweep(&net, &candidates, &SweepSettings { max_drop: 1.0, finetune: ft }, &train_set, &test_set).unwrap();
        let pick = result.selected_candidate();
        let pick_ok = pick.is_some_and(|c| c.config.weight_bits <= 5 && c.top1_accuracy >= float - 1.0);
        ok &= acc >= float - 1.5 && pick_ok;
        lines.push(format!("seed {seed}: w4a4 {acc:.1}, sweep -> {}", pick.map_or("none", |c| c.label.as_str())));
    }
    ensure(ok, format!("float {float:.1}; {}", lines.join("; ")))
}

fn vquant_bin(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vquant"))
        .args(args)
        .current_dir(root())
        .env_remove("VQUANT_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("vquant {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// Every file under `dir`, with manifest timestamps removed.
fn payloads(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let mut bytes = std::fs::read(&path).unwrap();
            if path.file_name().is_some_and(|n| n == "manifest.json") {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                if let Some(m) = v.as_object_mut() {
                    m.remove("started_at");
                    m.remove("finished_at");
                }
                bytes = serde_json::to_vec(&v).unwrap();
            }
            files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), bytes);
        }
    }
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = |name: &str| tmp.path().join(name).display().to_string();
    let (train_dir, ptq_dir, sweep_dir, shard_dir) = (out("train"), out("ptq"), out("sweep"), out("shard"));
    let (mem_csv, mem_manifest, gen_dir) = (out("mem/table.csv"), out("mem/manifest.json"), out("gen"));
    let (model_dir, quant_file, quant_manifest) = (out("train/model"), out("q/x.vqtq"), out("q/manifest.json"));
    std::fs::create_dir_all(tmp.path().join("mem")).unwrap();
    std::fs::create_dir_all(tmp.path().join("q")).unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["memtable", "-o", &mem_csv, "--manifest", &mem_manifest],
        vec!["gen-data", "--seed", "100", "--out", &gen_dir],
        vec!["quantize", "data/toy/test.x.vqtn", "--bits", "3", "--ratio", "0.02", "-o", &quant_file, "--manifest", &quant_manifest],
        vec!["train", "--config", "configs/toy-float.json", "--schedule", "F,3:2,2:0", "--out", &train_dir, "--save-model", &model_dir],
        vec!["shardsim", "--out", &shard_dir],
        vec!["ptq", "--model", "models/toy", "--data", "data/toy", "--seed", "1", "--out", &ptq_dir],
        vec!["sweep", "--model", "models/toy", "--data", "data/toy", "--seed", "2", "--out", &sweep_dir],
    ];
    let run_all = || -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
        for c in &commands {
            vquant_bin(c)?;
        }
        Ok(payloads(tmp.path()))
    };
    let first = run_all()?;
    let second = run_all()?;
    let differing: Vec<String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    ensure(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} commands, {} files identical across reruns", commands.len(), first.len())
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("memory arithmetic", Duration::from_secs(1), memory_arithmetic),
        ("codec bound suite", Duration::from_secs(10), codec_bounds),
        ("v-quant beats plain linear", Duration::from_secs(10), vquant_beats_linear),
        ("delta invariance", Duration::from_secs(1), delta_invariance),
        ("gradient correctness", Duration::from_secs(5), gradient_check),
        ("toy training parity", Duration::from_secs(120), training_parity),
        ("annealing direction", Duration::from_secs(300), annealing_direction),
        ("shard-sim regression", Duration::from_secs(10), shard_regression),
        ("ptq + fine-tune", Duration::from_secs(300), ptq_finetune),
        ("determinism", Duration::from_secs(60), determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if took <= *budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget:?} budget")),
            Err(d) => (false, d),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {}: {name}: {detail} [{:.2}s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
