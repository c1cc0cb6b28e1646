//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured margin (visible under `--nocapture`).

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crsam::curvature::{hutchinson_trace, normalized_trace, ProbeKind};
use crsam::data::SplitSpec;
use crsam::harness::{run_training, DatasetConfig, DiagnosticsConfig, TrainConfig};
use crsam::model::{init_params, Activation, ModelSpec, Objective, Scaled};
use crsam::optim::{
    crsam_step_with, Method, OptimizerConfig, OptimizerState, ProbeExecution, DEFAULT_LOG_FLOOR,
};
use crsam::selfcheck::{
    check_gradients, check_hutchinson, check_reduction, check_regularizer_gradient,
    check_scale_invariance, check_theorem1, check_trust_region, Tamper,
};

fn assert_check(
    criterion: &str,
    (passed, detail): (bool, String),
    elapsed: Duration,
    budget: Duration,
) {
    assert!(passed, "{criterion} FAIL: {detail}");
    assert!(
        elapsed <= budget,
        "{criterion} exceeded its {budget:?} budget: {elapsed:?}"
    );
    println!("{criterion} PASS ({elapsed:.2?}): {detail}");
}

#[test]
fn c01_theorem1_oracle_exactness() {
    let start = Instant::now();
    let result = check_theorem1(20260810);
    assert_check(
        "criterion 1 (Theorem-1 probe exactness)",
        result,
        start.elapsed(),
        Duration::from_secs(5),
    );
}

#[test]
fn c02_gradient_correctness() {
    let start = Instant::now();
    let result = check_gradients(20260810, Tamper::None);
    assert_check(
        "criterion 2 (gradient vs central differences)",
        result,
        start.elapsed(),
        Duration::from_secs(30),
    );
}

#[test]
fn c03_hutchinson_calibration() {
    let start = Instant::now();
    let result = check_hutchinson(20260810);
    assert_check(
        "criterion 3 (Hutchinson calibration)",
        result,
        start.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn c04_reduction_identity() {
    let start = Instant::now();
    let result = check_reduction(20260810);
    assert_check(
        "criterion 4 (CR-SAM -> SAM -> SGD reductions)",
        result,
        start.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn c05_regularizer_gradient() {
    let start = Instant::now();
    let result = check_regularizer_gradient(20260810);
    assert_check(
        "criterion 5 (regularizer gradient vs FD)",
        result,
        start.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn c08_scale_invariance() {
    let start = Instant::now();
    let result = check_scale_invariance(20260810);
    assert_check(
        "criterion 8 (normalized-trace scale invariance)",
        result,
        start.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn c09_trust_region_dominance() {
    let start = Instant::now();
    let result = check_trust_region(20260810);
    assert_check(
        "criterion 9 (trust-region oracle dominance)",
        result,
        start.elapsed(),
        Duration::from_secs(300),
    );
}

// ---------------------------------------------------------------------------
// Desk-scale experiment configuration shared by criteria 6 and 7.

const EXP_NOISE: f64 = 0.25;
const EXP_PEAK_LR: f64 = 0.05;
const EXP_MOMENTUM: f64 = 0.9;
const EXP_WEIGHT_DECAY: f64 = 5e-4;
const EXP_RHO_SAM: f64 = 0.05;
const EXP_RHO_CRSAM: f64 = 0.10;
const EXP_ALPHA: f64 = 0.02;
const EXP_BETA: f64 = 0.002;
const EXP_EPOCHS: usize = 200;
const EXP_SEEDS: u64 = 5;

fn experiment_config(method: Method, seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelSpec::mlp(vec![2, 64, 64, 2], Activation::Tanh).unwrap(),
        dataset: DatasetConfig::TwoMoons {
            n: 2500,
            noise: EXP_NOISE,
        },
        split: SplitSpec {
            train_fraction: 0.8, // 2000 train / 500 test
            seed: 1000 + seed,
        },
        optimizer: OptimizerConfig {
            method,
            peak_lr: EXP_PEAK_LR,
            momentum: EXP_MOMENTUM,
            weight_decay: EXP_WEIGHT_DECAY,
            rho: if method == Method::CrSam {
                EXP_RHO_CRSAM
            } else {
                EXP_RHO_SAM
            },
            alpha: if method == Method::CrSam { EXP_ALPHA } else { 0.0 },
            beta: if method == Method::CrSam { EXP_BETA } else { 0.0 },
            total_epochs: EXP_EPOCHS,
            log_floor: DEFAULT_LOG_FLOOR,
        },
        epochs: EXP_EPOCHS,
        batch_size: 128,
        seed,
        diagnostics: DiagnosticsConfig {
            geometry_every: 20,
            ar_every: 0,
            ar_k: 20,
            ar_samples: 500,
            probes: 100,
        },
        output_dir: std::env::temp_dir().join("crsam-acceptance"),
    }
}

#[test]
fn c06_ar_declines_during_sam_training() {
    let start = Instant::now();
    let diffs: Vec<(f64, f64)> = (0..EXP_SEEDS)
        .into_par_iter()
        .map(|seed| {
            let config = experiment_config(Method::Sam, seed);
            let result = run_training(&config).expect("training run");
            let (train, _) = crsam::harness::build_datasets(&config.materialized()).unwrap();
            let ar_at = |epoch: usize| -> f64 {
                let cp = result
                    .checkpoints
                    .iter()
                    .find(|c| c.epoch == epoch)
                    .unwrap_or_else(|| panic!("no checkpoint at epoch {epoch}"));
                crsam::curvature::approximation_ratio(
                    &config.model,
                    &cp.params,
                    &train,
                    EXP_RHO_SAM,
                    20,
                    500,
                    90 + seed,
                    crsam::curvature::ArOptions::default(),
                )
                .expect("ar report")
                .ar_mean
            };
            (ar_at(20), ar_at(200))
        })
        .collect();
    let mean_early: f64 = diffs.iter().map(|d| d.0).sum::<f64>() / diffs.len() as f64;
    let mean_late: f64 = diffs.iter().map(|d| d.1).sum::<f64>() / diffs.len() as f64;
    let elapsed = start.elapsed();
    assert!(
        mean_late < mean_early,
        "criterion 6 FAIL: mean AR epoch 200 ({mean_late:.4}) not below epoch 20 ({mean_early:.4}); per-seed {diffs:?}"
    );
    assert!(
        elapsed <= Duration::from_secs(300),
        "criterion 6 exceeded 5 min: {elapsed:?}"
    );
    println!(
        "criterion 6 (AR decline) PASS ({elapsed:.2?}): mean AR {mean_early:.4} @20 -> {mean_late:.4} @200 over {EXP_SEEDS} seeds"
    );
}

#[test]
fn c07_geometry_ordering() {
    let start = Instant::now();
    let methods = [Method::Sgd, Method::Sam, Method::CrSam];
    let jobs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| (0..EXP_SEEDS).map(move |s| (m, s)))
        .collect();
    let rows: Vec<(Method, f64, f64, f64)> = jobs
        .par_iter()
        .map(|&(method, seed)| {
            let config = experiment_config(method, seed);
            let result = run_training(&config).expect("training run");
            let geometry = result.final_geometry.expect("geometry").test;
            let acc = result.records.last().unwrap().test_acc;
            (method, geometry.trace_estimate, geometry.grad_norm, acc)
        })
        .collect();
    let mean = |m: Method, f: &dyn Fn(&(Method, f64, f64, f64)) -> f64| -> f64 {
        let sel: Vec<f64> = rows.iter().filter(|r| r.0 == m).map(f).collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    };
    let (tr_sgd, tr_sam, tr_cr) = (
        mean(Method::Sgd, &|r| r.1),
        mean(Method::Sam, &|r| r.1),
        mean(Method::CrSam, &|r| r.1),
    );
    let (gn_sgd, gn_sam, gn_cr) = (
        mean(Method::Sgd, &|r| r.2),
        mean(Method::Sam, &|r| r.2),
        mean(Method::CrSam, &|r| r.2),
    );
    let (acc_sgd, acc_sam, acc_cr) = (
        mean(Method::Sgd, &|r| r.3),
        mean(Method::Sam, &|r| r.3),
        mean(Method::CrSam, &|r| r.3),
    );
    let elapsed = start.elapsed();
    assert!(
        tr_cr < tr_sam && tr_sam < tr_sgd,
        "criterion 7 FAIL: trace ordering CR-SAM({tr_cr:.3}) < SAM({tr_sam:.3}) < SGD({tr_sgd:.3}) violated"
    );
    assert!(
        gn_cr < gn_sam && gn_sam < gn_sgd,
        "criterion 7 FAIL: grad-norm ordering CR-SAM({gn_cr:.4}) < SAM({gn_sam:.4}) < SGD({gn_sgd:.4}) violated"
    );
    let tie = 0.003; // 0.3 percentage points
    assert!(
        acc_cr >= acc_sam - tie && acc_sam >= acc_sgd - tie,
        "criterion 7 FAIL: accuracy ordering CR-SAM({acc_cr:.4}) >= SAM({acc_sam:.4}) >= SGD({acc_sgd:.4}) violated beyond ties"
    );
    assert!(
        elapsed <= Duration::from_secs(900),
        "criterion 7 exceeded 15 min: {elapsed:?}"
    );
    println!(
        "criterion 7 (geometry ordering) PASS ({elapsed:.2?}): trace {tr_cr:.2} < {tr_sam:.2} < {tr_sgd:.2}; grad_norm {gn_cr:.4} < {gn_sam:.4} < {gn_sgd:.4}; acc {acc_cr:.4} / {acc_sam:.4} / {acc_sgd:.4}"
    );
}

#[test]
fn c10_determinism_chain() {
    let start = Instant::now();
    // Full chain: run a config, write its artifacts, re-run from the echoed
    // config.json, and compare metrics.csv byte-for-byte. The wall-clock
    // telemetry column is the one deliberate exception and is masked.
    let dir = tempfile::tempdir().expect("tempdir");
    let mut config = experiment_config(Method::CrSam, 0);
    config.epochs = 8;
    config.optimizer.total_epochs = 8;
    config.output_dir = dir.path().join("first");
    config.diagnostics = DiagnosticsConfig {
        geometry_every: 4,
        ar_every: 8,
        ar_k: 5,
        ar_samples: 16,
        probes: 8,
    };
    let a = run_training(&config).expect("first run");
    crsam::harness::write_run(&a, &config.output_dir).expect("write first run");

    let mut echoed =
        crsam::harness::load_config(&config.output_dir.join("config.json")).expect("echo loads");
    assert_eq!(echoed, config.materialized(), "criterion 10 FAIL: config echo drifted");
    echoed.output_dir = dir.path().join("second");
    let b = run_training(&echoed).expect("second run");
    crsam::harness::write_run(&b, &echoed.output_dir).expect("write second run");

    let strip_wall = |csv: &str| -> String {
        csv.lines()
            .map(|line| {
                let (head, _) = line.rsplit_once(',').expect("csv row");
                head.to_string()
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let csv_a = std::fs::read_to_string(config.output_dir.join("metrics.csv")).unwrap();
    let csv_b = std::fs::read_to_string(echoed.output_dir.join("metrics.csv")).unwrap();
    assert_eq!(
        strip_wall(&csv_a),
        strip_wall(&csv_b),
        "criterion 10 FAIL: metrics differ when re-run from config.json"
    );
    assert_eq!(
        a.final_geometry, b.final_geometry,
        "criterion 10 FAIL: geometry differs between identical runs"
    );
    assert_eq!(a.ar_curve, b.ar_curve);
    assert_eq!(
        std::fs::read_to_string(config.output_dir.join("geometry.json")).unwrap(),
        std::fs::read_to_string(echoed.output_dir.join("geometry.json")).unwrap()
    );

    // Serial vs concurrent paired evaluations produce identical outcomes.
    let spec = ModelSpec::mlp(vec![2, 32, 2], Activation::Tanh).unwrap();
    let params = init_params(&spec, 4).unwrap();
    let batch = crsam::data::gen_two_moons(64, 0.25, 3).unwrap().full_batch();
    let cfg = OptimizerConfig {
        method: Method::CrSam,
        peak_lr: 0.05,
        momentum: 0.9,
        weight_decay: 5e-4,
        rho: 0.1,
        alpha: 0.02,
        beta: 0.002,
        total_epochs: 10,
        log_floor: DEFAULT_LOG_FLOOR,
    };
    let state = OptimizerState::new(&params);
    let serial =
        crsam_step_with(&spec, &params, &batch, &cfg, &state, ProbeExecution::Serial).unwrap();
    let parallel =
        crsam_step_with(&spec, &params, &batch, &cfg, &state, ProbeExecution::Parallel).unwrap();
    assert!(
        serial.new_params.bits_eq(&parallel.new_params),
        "criterion 10 FAIL: serial vs parallel params differ"
    );
    assert!(serial.new_state.bits_eq(&parallel.new_state));
    assert_eq!(
        serial.report.d2.unwrap().to_bits(),
        parallel.report.d2.unwrap().to_bits()
    );
    println!(
        "criterion 10 (determinism chain) PASS ({:.2?}): bitwise-identical re-runs (wall_ms telemetry masked) and serial==parallel steps",
        start.elapsed()
    );
}

#[test]
fn c11_selfcheck_subcommand() {
    let start = Instant::now();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_crsam"))
        .arg("selfcheck")
        .output()
        .expect("selfcheck runs");
    let elapsed = start.elapsed();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        out.status.code(),
        Some(0),
        "criterion 11 FAIL: selfcheck exit {:?}\n{stdout}",
        out.status.code()
    );
    assert!(
        elapsed < Duration::from_secs(60),
        "criterion 11 FAIL: selfcheck took {elapsed:?} (budget 60 s)"
    );
    for name in [
        "theorem1-exactness",
        "gradient-check",
        "hutchinson-calibration",
        "reduction-identity",
        "regularizer-gradient",
        "scale-invariance",
        "trust-region-dominance",
    ] {
        assert!(stdout.contains(name), "criterion 11 FAIL: missing {name}");
    }
    println!("criterion 11 (selfcheck) PASS ({elapsed:.2?}): exit 0 within budget");
}

// Criterion 8's second clause, checked directly against the library API (the
// selfcheck covers the same ground through its own wrapper).
#[test]
fn c08b_trace_scales_linearly() {
    let spec = ModelSpec::mlp(vec![2, 6, 2], Activation::Tanh).unwrap();
    let w = init_params(&spec, 1).unwrap();
    let batch = crsam::data::gen_two_moons(24, 0.2, 2).unwrap().full_batch();
    let base = hutchinson_trace(&spec, &w, &batch, 64, 9, ProbeKind::Gaussian).unwrap();
    let base_gn = spec.loss_and_grad(&w, &batch).unwrap().grad.norm_l2();
    let base_nt = normalized_trace(base.estimate, base_gn).unwrap();
    for c in [0.1, 10.0] {
        let scaled = Scaled::new(spec.clone(), c).unwrap();
        let t = hutchinson_trace(&scaled, &w, &batch, 64, 9, ProbeKind::Gaussian).unwrap();
        let gn = scaled.loss_and_grad(&w, &batch).unwrap().grad.norm_l2();
        let nt = normalized_trace(t.estimate, gn).unwrap();
        assert!((t.estimate - c * base.estimate).abs() <= 1e-6 * (c * base.estimate).abs());
        assert!((nt - base_nt).abs() <= 1e-10 * base_nt.abs());
    }
}
