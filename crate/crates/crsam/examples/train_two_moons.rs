//! Train a small MLP on two-moons with CR-SAM and print per-epoch metrics.
//!
//!     cargo run --release --example train_two_moons

use crsam::data::SplitSpec;
use crsam::harness::{run_training, DatasetConfig, DiagnosticsConfig, TrainConfig};
use crsam::model::{Activation, ModelSpec};
use crsam::optim::OptimizerConfig;

fn main() -> crsam::Result<()> {
    let mut optimizer = OptimizerConfig::preset("desk-crsam").unwrap();
    optimizer.rho = 0.10;
    optimizer.alpha = 0.005;
    optimizer.beta = 0.0005;
    let config = TrainConfig {
        model: ModelSpec::mlp(vec![2, 32, 32, 2], Activation::Tanh)?,
        dataset: DatasetConfig::TwoMoons { n: 600, noise: 0.25 },
        split: SplitSpec {
            train_fraction: 0.8,
            seed: 7,
        },
        optimizer,
        epochs: 60,
        batch_size: 64,
        seed: 1,
        diagnostics: DiagnosticsConfig {
            geometry_every: 20,
            probes: 50,
            ..Default::default()
        },
        output_dir: std::env::temp_dir().join("crsam-train-example"),
    };

    let result = run_training(&config)?;
    println!("epoch  train_loss  train_acc  test_loss  test_acc      lr    mean_d2");
    for r in result.records.iter().step_by(10).chain(result.records.last()) {
        println!(
            "{:>5}  {:>10.4}  {:>9.4}  {:>9.4}  {:>8.4}  {:>7.4}  {:>9.2e}",
            r.epoch, r.train_loss, r.train_acc, r.test_loss, r.test_acc, r.lr, r.mean_d2
        );
    }
    let geometry = result.final_geometry.unwrap();
    println!("\nfinal geometry (test set):");
    println!("  grad_norm        {:.4}", geometry.test.grad_norm);
    println!(
        "  trace            {:.3} +/- {:.3}",
        geometry.test.trace_estimate, geometry.test.trace_stderr
    );
    println!("  top eigenvalue   {:.3}", geometry.test.top_eigenvalue);
    println!("  normalized trace {:.3}", geometry.test.normalized_trace);
    Ok(())
}
