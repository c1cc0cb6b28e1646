//! End-to-end tests of the `crsam` binary: exit codes, override handling,
//! and byte-level agreement between CLI outputs and direct library calls.

use std::path::Path;
use std::process::Command;

use crsam::curvature::DatasetTag;
use crsam::data::{load_idx, SplitSpec};
use crsam::harness::{
    build_datasets, landscape_csv, landscape_grid, load_checkpoint, to_json_17, DatasetConfig,
    DiagnosticsConfig, TrainConfig,
};
use crsam::model::{Activation, ModelSpec};
use crsam::optim::OptimizerConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crsam"))
}

fn small_config(dir: &Path) -> TrainConfig {
    TrainConfig {
        model: ModelSpec::mlp(vec![2, 8, 2], Activation::Relu).unwrap(),
        dataset: DatasetConfig::TwoMoons { n: 80, noise: 0.2 },
        split: SplitSpec {
            train_fraction: 0.8,
            seed: 7,
        },
        optimizer: OptimizerConfig::preset("desk-crsam").unwrap(),
        epochs: 4,
        batch_size: 16,
        seed: 5,
        diagnostics: DiagnosticsConfig {
            geometry_every: 2,
            ar_every: 4,
            ar_k: 4,
            ar_samples: 8,
            probes: 8,
        },
        output_dir: dir.join("out"),
    }
}

fn write_config(dir: &Path, config: &TrainConfig) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, to_json_17(config).unwrap()).unwrap();
    path
}

#[test]
fn train_succeeds_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let path = write_config(dir.path(), &config);
    let status = bin().args(["train", "--config"]).arg(&path).status().unwrap();
    assert_eq!(status.code(), Some(0));
    for file in ["metrics.csv", "geometry.json", "ar.json", "config.json"] {
        assert!(config.output_dir.join(file).exists(), "{file} missing");
    }
    assert!(config.output_dir.join("checkpoints/epoch_0004.json").exists());
}

#[test]
fn train_missing_config_exits_2() {
    let status = bin()
        .args(["train", "--config", "/nonexistent/nope.json"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn train_invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"not\": \"a config\"}").unwrap();
    let status = bin().args(["train", "--config"]).arg(&path).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn train_divergence_exits_3_with_partial_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path());
    config.model = ModelSpec::Quadratic {
        matrix: vec![vec![-1.0]],
        offset: vec![0.0],
        start: Some(vec![1.0]),
    };
    config.optimizer = OptimizerConfig::sgd(1e150, 0.0, 0.0, 3);
    config.epochs = 3;
    config.batch_size = 1000;
    config.diagnostics = DiagnosticsConfig::default();
    let path = write_config(dir.path(), &config);
    let out = bin().args(["train", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let metrics = std::fs::read_to_string(config.output_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2); // header + last good epoch
}

#[test]
fn override_flag_takes_precedence_and_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let path = write_config(dir.path(), &config);
    let status = bin()
        .args(["train", "--config"])
        .arg(&path)
        .args(["--optimizer.rho", "0.15", "--epochs", "2"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let echoed: TrainConfig = serde_json::from_str(
        &std::fs::read_to_string(config.output_dir.join("config.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(echoed.optimizer.rho, 0.15);
    assert_eq!(echoed.epochs, 2);
    let metrics = std::fs::read_to_string(config.output_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn output_dir_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path());
    config.epochs = 1;
    config.diagnostics = DiagnosticsConfig::default();
    let path = write_config(dir.path(), &config);
    let alt = dir.path().join("alt-out");
    let status = bin()
        .env("CRSAM_OUTPUT_DIR", &alt)
        .args(["train", "--config"])
        .arg(&path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(alt.join("metrics.csv").exists());
    assert!(!config.output_dir.join("metrics.csv").exists());
}

#[test]
fn gen_data_round_trips_through_idx() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("x.idx");
    let labels = dir.path().join("y.idx");
    let status = bin()
        .args(["gen-data", "--kind", "two-moons", "--n", "2000", "--noise", "0.2"])
        .args(["--seed", "1"])
        .arg("--out-images")
        .arg(&images)
        .arg("--out-labels")
        .arg(&labels)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let ds = load_idx(&images, &labels, None).unwrap();
    assert_eq!(ds.len(), 2000);
    assert_eq!(ds.n_classes(), 2);
    let ones = ds.labels().iter().filter(|&&y| y == 1).count();
    assert_eq!(ones, 1000);
}

#[test]
fn geometry_matches_direct_library_call_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let path = write_config(dir.path(), &config);
    assert_eq!(
        bin().args(["train", "--config"]).arg(&path).status().unwrap().code(),
        Some(0)
    );
    let checkpoint = config.output_dir.join("checkpoints/epoch_0004.json");
    let out_json = dir.path().join("geometry.json");
    let status = bin()
        .args(["geometry", "--checkpoint"])
        .arg(&checkpoint)
        .args(["--config"])
        .arg(&path)
        .args(["--tag", "test", "--probes", "16", "--seed", "3", "--out"])
        .arg(&out_json)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    let cp = load_checkpoint(&checkpoint).unwrap();
    let (_, test) = build_datasets(&config.materialized()).unwrap();
    let direct = crsam::curvature::geometry_report(
        &cp.model,
        &cp.params,
        &test,
        16,
        3,
        DatasetTag::Test,
    )
    .unwrap();
    let via_cli = std::fs::read_to_string(&out_json).unwrap();
    assert_eq!(via_cli, to_json_17(&direct).unwrap());
}

#[test]
fn landscape_emits_expected_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let path = write_config(dir.path(), &config);
    assert_eq!(
        bin().args(["train", "--config"]).arg(&path).status().unwrap().code(),
        Some(0)
    );
    let checkpoint = config.output_dir.join("checkpoints/epoch_0004.json");
    let out_csv = dir.path().join("landscape.csv");
    let status = bin()
        .args(["landscape", "--checkpoint"])
        .arg(&checkpoint)
        .args(["--config"])
        .arg(&path)
        .args(["--resolution", "25", "--extent", "0.5", "--seed", "2", "--out"])
        .arg(&out_csv)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(&out_csv).unwrap();
    assert_eq!(text.lines().count(), 626); // header + 25*25 cells
    assert!(text.starts_with("i,j,a,b,loss"));

    // Also bit-identical to the direct library call.
    let cp = load_checkpoint(&checkpoint).unwrap();
    let (_, test) = build_datasets(&config.materialized()).unwrap();
    let grid = landscape_grid(&cp.model, &cp.params, &test, 0.5, 25, 2).unwrap();
    assert_eq!(text, landscape_csv(&grid));
}

#[test]
fn ar_subcommand_reports_per_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let path = write_config(dir.path(), &config);
    assert_eq!(
        bin().args(["train", "--config"]).arg(&path).status().unwrap().code(),
        Some(0)
    );
    let cps = [
        config.output_dir.join("checkpoints/epoch_0002.json"),
        config.output_dir.join("checkpoints/epoch_0004.json"),
    ];
    let out_json = dir.path().join("ar.json");
    let status = bin()
        .args(["ar", "--config"])
        .arg(&path)
        .arg("--checkpoints")
        .args(&cps)
        .args(["--k", "4", "--n", "6", "--seed", "1", "--out"])
        .arg(&out_json)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let parsed: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(&out_json).unwrap()).unwrap();
    assert_eq!(parsed.len(), 2);
    assert_eq!(parsed[0]["epoch"], 2);
    assert_eq!(parsed[1]["epoch"], 4);
    assert_eq!(parsed[0]["k_steps"], 4);
}

#[test]
fn selfcheck_fault_injection_names_the_gradient_check() {
    // The full selfcheck is exercised by the acceptance suite; here only the
    // fault path, which fails fast.
    let out = bin()
        .args(["selfcheck", "--tamper-gradient"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let all = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(all.contains("gradient-check"), "output was: {all}");
}
