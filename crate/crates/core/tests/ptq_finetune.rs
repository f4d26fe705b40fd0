use std::sync::OnceLock;

use vquant::data::{split, Dataset, TaskSpec, TOY_SIZES};
use vquant::model_io::{load_model, save_model};
use vquant::ptq::{
    finetune, passthrough_gradients, quantize_model, sweep, FinetuneConfig, InferenceQuantConfig, SweepOutcome,
    SweepSettings,
};
use vquant::report::RunStatus;
use vquant::rng::RngStream;
use vquant::train::{compute_gradients, evaluate, train, ActivationStorage, AnnealSchedule, MlpNetwork, TrainConfig};

struct Toy {
    net: MlpNetwork,
    train: Dataset,
    test: Dataset,
    float: f64,
}

fn toy() -> &'static Toy {
    static TOY: OnceLock<Toy> = OnceLock::new();
    TOY.get_or_init(|| {
        let (train_set, test) = split(&TaskSpec::toy().generate(100).unwrap(), 0.8);
        let net = MlpNetwork::init(&TOY_SIZES, &mut RngStream::new(0)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            schedule: AnnealSchedule::parse("F", 30).unwrap(),
            phase_lr_decay: 1.0,
        };
        let net = train(net, &train_set, None, &cfg).unwrap().net;
        let float = evaluate(&net, &test).unwrap();
        Toy { net, train: train_set, test, float }
    })
}

fn ft(seed: u64) -> FinetuneConfig {
    FinetuneConfig { epochs: 3, learning_rate: 0.01, batch_size: 32, seed }
}

#[test]
fn bypass_predicts_like_the_float_net() {
    let t = toy();
    let q = quantize_model(&t.net, &InferenceQuantConfig::bypass()).unwrap();
    assert_eq!(q.accuracy(&t.test).unwrap(), t.float);
    assert_eq!(q.logits(t.test.features()).unwrap(), vquant::train::infer(&t.net, t.test.features()).unwrap());
}

#[test]
fn eight_bit_stays_within_half_a_point() {
    let t = toy();
    let acc = quantize_model(&t.net, &InferenceQuantConfig::uniform(8, 0.0).unwrap()).unwrap().accuracy(&t.test).unwrap();
    assert!((acc - t.float).abs() <= 0.5, "8-bit {acc} vs float {}", t.float);
}

#[test]
fn one_bit_collapses_but_completes() {
    let t = toy();
    let acc = quantize_model(&t.net, &InferenceQuantConfig::uniform(1, 0.0).unwrap()).unwrap().accuracy(&t.test).unwrap();
    assert!(acc < t.float - 10.0, "1-bit {acc} vs float {}", t.float);
}

#[test]
fn zero_epoch_finetune_is_identity() {
    let t = toy();
    let cfg = InferenceQuantConfig::uniform(4, 0.01).unwrap();
    let run = finetune(&t.net, &cfg, &t.train, &FinetuneConfig { epochs: 0, ..ft(0) }).unwrap();
    assert_eq!(run.net, t.net);
    assert!(run.losses.is_empty());
}

#[test]
fn finetune_recovers_four_bit_accuracy() {
    let t = toy();
    let cfg = InferenceQuantConfig::uniform(4, 0.01).unwrap();
    let ptq = quantize_model(&t.net, &cfg).unwrap().accuracy(&t.test).unwrap();
    for seed in 0..3 {
        let run = finetune(&t.net, &cfg, &t.train, &ft(seed)).unwrap();
        assert_eq!(run.status, RunStatus::Completed);
        let tuned = quantize_model(&run.net, &cfg).unwrap().accuracy(&t.test).unwrap();
        assert!(tuned >= ptq, "seed {seed}: {tuned} < {ptq}");
        assert!(tuned >= t.float - 1.5, "seed {seed}: {tuned} vs float {}", t.float);
    }
}

#[test]
fn finetune_never_hurts_by_more_than_half_a_point() {
    let t = toy();
    for (bits, ratio) in [(5, 0.01), (8, 0.0), (3, 0.02)] {
        let cfg = InferenceQuantConfig::uniform(bits, ratio).unwrap();
        let ptq = quantize_model(&t.net, &cfg).unwrap().accuracy(&t.test).unwrap();
        for seed in 0..3 {
            let run = finetune(&t.net, &cfg, &t.train, &ft(seed)).unwrap();
            let tuned = quantize_model(&run.net, &cfg).unwrap().accuracy(&t.test).unwrap();
            assert!(tuned >= ptq - 0.5, "{bits}/{ratio} seed {seed}: {tuned} < {ptq} - 0.5");
        }
    }
}

#[test]
fn passthrough_gradient_equals_float_gradient_at_dequantized_weights() {
    let t = toy();
    let cfg = InferenceQuantConfig { act_bits: vquant::ptq::BYPASS_BITS, ..InferenceQuantConfig::uniform(4, 0.01).unwrap() };
    let rows: Vec<usize> = (0..32).collect();
    let (x, y) = t.train.batch(&rows);
    let (loss, g) = passthrough_gradients(&t.net, &cfg, &x, &y).unwrap();
    let deq = quantize_model(&t.net, &cfg).unwrap().effective;
    let (loss_ref, g_ref, _) = compute_gradients(&deq, &x, &y, &ActivationStorage::Full).unwrap();
    assert_eq!(loss, loss_ref);
    assert_eq!(g.weights, g_ref.weights);
    assert_eq!(g.biases, g_ref.biases);
}

#[test]
fn sweep_selects_a_low_bit_candidate() {
    let t = toy();
    let candidates = [
        InferenceQuantConfig::uniform(4, 0.01).unwrap(),
        InferenceQuantConfig::uniform(5, 0.01).unwrap(),
        InferenceQuantConfig::uniform(8, 0.0).unwrap(),
    ];
    let settings = SweepSettings { max_drop: 1.0, finetune: ft(0) };
    let result = sweep(&t.net, &candidates, &settings, &t.train, &t.test).unwrap();
    assert_eq!(result.outcome, SweepOutcome::Selected);
    let chosen = result.selected_candidate().unwrap();
    assert!(chosen.config.weight_bits <= 5, "{}", chosen.label);
    assert!(chosen.top1_accuracy >= result.target_accuracy);
    for c in &result.candidates {
        if c.config.weight_bits < chosen.config.weight_bits {
            assert!(!c.meets_target, "{} qualifies with fewer bits", c.label);
        }
    }
}

#[test]
fn sweep_single_candidate_and_none_qualify() {
    let t = toy();
    let settings = SweepSettings { max_drop: 1.0, finetune: FinetuneConfig { epochs: 1, ..ft(0) } };
    let one = sweep(&t.net, &[InferenceQuantConfig::bypass()], &settings, &t.train, &t.test).unwrap();
    assert_eq!(one.selected, Some(0));
    assert_eq!(one.candidates[0].ptq_accuracy, t.float);

    let ones = [InferenceQuantConfig::uniform(1, 0.0).unwrap(), InferenceQuantConfig::uniform(1, 0.0).unwrap()];
    let strict = SweepSettings { max_drop: 0.0, ..settings };
    let none = sweep(&t.net, &ones, &strict, &t.train, &t.test).unwrap();
    assert_eq!(none.outcome, SweepOutcome::NoneQualify);
    assert_eq!(none.selected, None);
    assert!(none.best < ones.len());

    assert!(sweep(&t.net, &[], &settings, &t.train, &t.test).is_err());
}

#[test]
fn model_directory_round_trip() {
    let t = toy();
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_model(dir.path(), &t.net).unwrap();
    assert_eq!(manifest.sizes, TOY_SIZES.to_vec());
    assert_eq!(load_model(dir.path()).unwrap(), t.net);
}
