use std::collections::HashSet;
use std::fs;

use super::*;
use crate::error::Error;
use crate::nnet::{LayerSpec, Model, ModelSpec};
use crate::objective::Objective;
use crate::optim::{Hyper, LrSchedule, TrainingTask};
use crate::perturb::NoiseSpec;
use crate::rng::seeded_rng;
use crate::tensor::Tensor;

fn blobs_config(out: &std::path::Path, phases: &str, seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelSpec::mlp(2, &[8], 3, LayerSpec::Tanh),
        dataset: DatasetSpec::Synthetic {
            shape: SyntheticKind::Blobs,
            n: 120,
            classes: 3,
            noise_std: 0.5,
            seed: 1,
            test_fraction: 0.25,
        },
        batch_size: 16,
        seeds,
        hyper: Hyper::sgd(0.1).with_momentum(0.9),
        lr_schedule: LrSchedule::Constant { lr: 0.1 },
        phases: phases.into(),
        noise: NoiseSpec::fixed(0.4),
        out_dir: out.to_path_buf(),
    }
}

#[test]
fn synthetic_is_deterministic_and_balanced() {
    for kind in [SyntheticKind::Blobs, SyntheticKind::Spirals] {
        let a = gen_synthetic(kind, 301, 4, 0.1, 9).unwrap();
        assert_eq!(a, gen_synthetic(kind, 301, 4, 0.1, 9).unwrap());
        assert_ne!(a, gen_synthetic(kind, 301, 4, 0.1, 10).unwrap());
        for c in 0..4 {
            let count = a.labels.iter().filter(|&&l| l == c).count() as f64;
            assert!((count - 301.0 / 4.0).abs() <= 1.0);
        }
        assert_eq!(a.example_shape(), &[2]);
        assert_eq!(a.provenance, Provenance::Synthetic);
    }
    assert!(gen_synthetic(SyntheticKind::Blobs, 2, 3, 0.0, 0).is_err());
    assert!(gen_synthetic(SyntheticKind::Blobs, 3, 3, -1.0, 0).is_err());
}

#[test]
fn noiseless_blobs_are_learned_by_a_linear_model() {
    let data = gen_synthetic(SyntheticKind::Blobs, 90, 3, 0.0, 0).unwrap();
    let model = Model::new(ModelSpec {
        input: vec![2],
        layers: vec![LayerSpec::Dense { units: 3, bias: true }],
    })
    .unwrap();
    let task = ModelTask::new(&model, &data, &data, 10, seeded_rng(1)).unwrap();
    let schedule = crate::optim::PhaseSchedule::parse("30", NoiseSpec::default()).unwrap();
    let (params, log, _) = crate::optim::run_phase_schedule(
        &task,
        model.init_params(&mut seeded_rng(0)),
        &schedule,
        &Hyper::sgd(0.5),
        &LrSchedule::Constant { lr: 0.5 },
        &mut seeded_rng(2),
    )
    .unwrap();
    assert_eq!(log.last().unwrap().train_acc, 1.0);
    assert_eq!(task.train_objective().evaluate(&params).unwrap().error_rate, 0.0);
}

#[test]
fn split_is_disjoint_and_deterministic() {
    let data = gen_synthetic(SyntheticKind::Spirals, 200, 2, 0.1, 3).unwrap();
    let (tr, te) = data.split(0.25, 7).unwrap();
    assert_eq!((tr.len(), te.len()), (150, 50));
    assert_eq!((tr.clone(), te.clone()), data.split(0.25, 7).unwrap());
    let rows = |d: &Dataset| -> HashSet<Vec<u64>> {
        d.inputs
            .data()
            .chunks(2)
            .map(|r| r.iter().map(|x| x.to_bits()).collect())
            .collect()
    };
    assert!(rows(&tr).is_disjoint(&rows(&te)));
    assert!(data.split(0.0, 1).is_err());
    assert!(data.split(1.0, 1).is_err());
}

#[test]
fn epochs_visit_every_example_once() {
    let data = gen_synthetic(SyntheticKind::Blobs, 53, 3, 0.3, 0).unwrap();
    let model = Model::new(ModelSpec::mlp(2, &[], 3, LayerSpec::Tanh)).unwrap();
    let task = ModelTask::new(&model, &data, &data, 8, seeded_rng(4)).unwrap();
    assert_eq!(task.steps_per_epoch(), 7);
    for e in 0..4 {
        let mut order = task.order(e);
        assert_eq!(order, task.order(e));
        order.sort_unstable();
        assert_eq!(order, (0..53).collect::<Vec<_>>());
        let batches = task.epoch(e).unwrap();
        assert_eq!(batches.len(), 7);
    }
    assert_ne!(task.order(0), task.order(1));
}

#[test]
fn dataset_objective_matches_single_batch() {
    let data = gen_synthetic(SyntheticKind::Spirals, 2500, 3, 0.2, 5).unwrap();
    let model = Model::new(ModelSpec::mlp(2, &[6], 3, LayerSpec::Tanh)).unwrap();
    let params = model.init_params(&mut seeded_rng(1));
    let chunked = DatasetObjective::new(&model, &data).unwrap();
    let all: Vec<usize> = (0..data.len()).collect();
    let batch = data.batch(&all).unwrap();
    let whole = crate::objective::BatchObjective::new(&model, &batch);
    let (a, b) = (chunked.evaluate(&params).unwrap(), whole.evaluate(&params).unwrap());
    assert!((a.loss - b.loss).abs() < 1e-12);
    assert_eq!(a.error_rate, b.error_rate);
    let (_, ga) = chunked.eval_grad(&params).unwrap();
    let (_, gb) = whole.eval_grad(&params).unwrap();
    assert!(ga.sub(&gb).unwrap().norm() < 1e-12);
}

fn idx_fixture(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    // Two 3×3 images with pixel bytes 0..=8 and 255 - (0..=8), labels 7 and 2.
    let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 3];
    img.extend(0u8..9);
    img.extend((0u8..9).map(|b| 255 - b));
    let lab = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 2];
    let (ip, lp) = (dir.join("img.idx"), dir.join("lab.idx"));
    fs::write(&ip, img).unwrap();
    fs::write(&lp, lab).unwrap();
    (ip, lp)
}

#[test]
fn idx_fixture_decodes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = idx_fixture(dir.path());
    let d = load_idx(&ip, &lp).unwrap();
    assert_eq!(d.inputs.shape(), &[2, 3, 3, 1]);
    assert_eq!(d.labels, vec![7, 2]);
    assert_eq!(d.classes, 8);
    assert_eq!(d.provenance, Provenance::Idx);
    let px = d.inputs.data();
    assert_eq!(px[0], 0.0);
    assert_eq!(px[1], 1.0 / 255.0);
    assert_eq!(px[8], 8.0 / 255.0);
    assert_eq!(px[9], 1.0);
    assert_eq!(px[17], 247.0 / 255.0);
}

#[test]
fn idx_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = idx_fixture(dir.path());
    // Images passed where labels are expected.
    match load_idx(&lp, &ip).unwrap_err() {
        Error::BadMagic { observed, expected, .. } => assert_eq!((observed, expected), (0x801, 0x803)),
        e => panic!("{e}"),
    }
    let short = dir.path().join("short.idx");
    let bytes = fs::read(&ip).unwrap();
    fs::write(&short, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(load_idx(&short, &lp).unwrap_err(), Error::Truncated(_)));
    fs::write(&short, &bytes[..6]).unwrap();
    assert!(matches!(load_idx(&short, &lp).unwrap_err(), Error::Truncated(_)));
    let one = dir.path().join("one.idx");
    fs::write(&one, [0, 0, 8, 1, 0, 0, 0, 1, 4]).unwrap();
    assert!(matches!(
        load_idx(&ip, &one).unwrap_err(),
        Error::CountMismatch { images: 2, labels: 1 }
    ));
    assert!(matches!(
        load_idx(dir.path().join("missing"), &lp).unwrap_err(),
        Error::Io(_)
    ));
}

#[test]
fn idx_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seeded_rng(3);
    let n = 17;
    let px: Vec<f64> = (0..n * 4 * 5).map(|_| rng.below(256) as f64 / 255.0).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    let d = Dataset::new(Tensor::new(vec![n, 4, 5, 1], px).unwrap(), labels, 10, Provenance::Idx).unwrap();
    let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
    write_idx(&d, &ip, &lp).unwrap();
    assert_eq!(load_idx(&ip, &lp).unwrap(), d);
}

#[test]
fn cifar_record_decodes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut rec = vec![3u8];
    rec.extend((0..3072).map(|i| (i % 251) as u8));
    let p = dir.path().join("b.bin");
    fs::write(&p, &rec).unwrap();
    let d = load_cifar_binary(&[&p]).unwrap();
    assert_eq!(d.inputs.shape(), &[1, 32, 32, 3]);
    assert_eq!(d.labels, vec![3]);
    let px = d.inputs.data();
    // Pixel (0, 0): red byte 0, green byte 1024, blue byte 2048.
    assert_eq!(px[0], 0.0);
    assert_eq!(px[1], (1024 % 251) as f64 / 255.0);
    assert_eq!(px[2], (2048 % 251) as f64 / 255.0);
    // Pixel (31, 31): bytes 1023, 2047, 3071.
    assert_eq!(px[3071], (3071 % 251) as f64 / 255.0);
    assert_eq!(px[3069], (1023 % 251) as f64 / 255.0);

    let mut two = rec.clone();
    two.extend(&rec);
    fs::write(&p, &two).unwrap();
    assert_eq!(load_cifar_binary(&[&p, &p]).unwrap().len(), 4);

    rec.push(0);
    fs::write(&p, &rec).unwrap();
    assert!(matches!(
        load_cifar_binary(&[&p]).unwrap_err(),
        Error::Framing {
            len: 3074,
            record: 3073
        }
    ));
    let mut bad = vec![10u8];
    bad.extend(vec![0u8; 3072]);
    fs::write(&p, &bad).unwrap();
    assert!(matches!(load_cifar_binary(&[&p]).unwrap_err(), Error::Parse(_)));
}

#[test]
fn summary_arithmetic() {
    let s = SummaryStats::from_accuracies("x", &[0.90, 0.92, 0.94]).unwrap();
    assert!((s.mean_test_acc - 0.92).abs() < 1e-12);
    assert_eq!((s.min_test_acc, s.max_test_acc), (0.90, 0.94));
    assert!(SummaryStats::from_accuracies("x", &[]).is_err());
}

#[test]
fn config_round_trips() {
    let cfg = blobs_config(std::path::Path::new("out"), "2-1S", vec![0, 1]);
    let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);
    let minimal = r#"{
        "model": {"input": [2], "layers": [{"type": "dense", "units": 3}]},
        "dataset": {"kind": "synthetic", "shape": "spirals", "n": 60, "classes": 3, "noise_std": 0.1, "seed": 0},
        "batch_size": 8, "seeds": [0],
        "hyper": {"lr": 0.1},
        "lr_schedule": {"type": "sgdr", "initial": 0.1, "first_period": 10},
        "phases": "5S"
    }"#;
    let cfg = ExperimentConfig::from_json(minimal).unwrap();
    assert_eq!(cfg.noise, NoiseSpec::default());
    assert!(ExperimentConfig::from_json(&minimal.replace("5S", "5Q")).is_err());
    assert!(ExperimentConfig::from_json(&minimal.replace("\"seeds\": [0]", "\"seeds\": []")).is_err());
}

#[test]
fn two_seed_experiment_writes_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs_config(dir.path(), "1", vec![0, 1]);
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.runs.len(), 2);
    assert!(report.failures.is_empty());
    // 90 training examples in batches of 16.
    for run in &report.runs {
        assert_eq!(run.log.rows.len(), 1);
        assert_eq!(run.passes.backward, 6);
        assert_eq!(run.log.rows[0].forward, 6);
    }
    for f in [
        "config.json",
        "seed0.csv",
        "seed1.csv",
        "seed0.ckpt",
        "summary.csv",
        "failures.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let s = summarize(dir.path()).unwrap();
    assert_eq!(s, report.summary);
    assert_eq!(s.seeds, 2);
    let ckpt = crate::nnet::ParamSet::load(seed_checkpoint_path(dir.path(), 1)).unwrap();
    assert_eq!(ckpt, report.runs[1].params);
}

#[test]
fn identical_configs_give_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&blobs_config(a.path(), "2-1S-1S2", vec![3, 4])).unwrap();
    run_experiment(&blobs_config(b.path(), "2-1S-1S2", vec![3, 4])).unwrap();
    for f in [
        "seed3.csv",
        "seed4.csv",
        "seed3.ckpt",
        "seed4.ckpt",
        "summary.csv",
        "failures.csv",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(ra.runs[0].passes.backward, 6 * (2 + 2 + 4));
}

#[test]
fn failed_seed_is_quarantined() {
    let dir = tempfile::tempdir().unwrap();
    // A directory where seed 1's log should go makes that write fail.
    fs::create_dir(seed_log_path(dir.path(), 1)).unwrap();
    let report = run_experiment(&blobs_config(dir.path(), "1", vec![0, 1, 2])).unwrap();
    assert_eq!(report.runs.len(), 2);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].0, 1);
    assert_eq!(report.summary.seeds, 2);
    let failures = fs::read_to_string(dir.path().join("failures.csv")).unwrap();
    assert!(failures.lines().nth(1).unwrap().starts_with("1,\""));
}
