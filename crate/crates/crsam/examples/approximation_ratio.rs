//! How well one ascent step approximates worst-case sharpness, tracked over
//! a short SAM training run: the ratio starts near 1 and declines as the
//! landscape curves.
//!
//!     cargo run --release --example approximation_ratio

use crsam::data::SplitSpec;
use crsam::harness::{ar_curve, build_datasets, run_training, DatasetConfig, DiagnosticsConfig,
    TrainConfig};
use crsam::model::{Activation, ModelSpec};
use crsam::optim::{Method, OptimizerConfig};

fn main() -> crsam::Result<()> {
    let config = TrainConfig {
        model: ModelSpec::mlp(vec![2, 32, 32, 2], Activation::Tanh)?,
        dataset: DatasetConfig::TwoMoons { n: 800, noise: 0.25 },
        split: SplitSpec {
            train_fraction: 0.8,
            seed: 3,
        },
        optimizer: OptimizerConfig {
            method: Method::Sam,
            ..OptimizerConfig::preset("desk-sam").unwrap()
        },
        epochs: 80,
        batch_size: 64,
        seed: 11,
        diagnostics: DiagnosticsConfig {
            geometry_every: 10, // snapshot cadence
            ..Default::default()
        },
        output_dir: std::env::temp_dir().join("crsam-ar-example"),
    };
    let result = run_training(&config)?;
    let (train, _) = build_datasets(&result.config_echo)?;
    let curve = ar_curve(
        &config.model,
        &result.checkpoints,
        &train,
        config.optimizer.rho,
        20,
        200,
        17,
    )?;
    println!("epoch   AR mean   AR stderr   n   excluded");
    for p in &curve {
        println!(
            "{:>5}   {:>7.4}   {:>9.4}  {:>4}  {:>8}",
            p.epoch, p.report.ar_mean, p.report.ar_stderr, p.report.n_samples,
            p.report.n_excluded
        );
    }
    Ok(())
}
