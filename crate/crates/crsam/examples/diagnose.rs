//! Scratch diagnostic: per-epoch curves for SAM vs CR-SAM (temporary).

use crsam::data::SplitSpec;
use crsam::harness::{run_training, DatasetConfig, DiagnosticsConfig, TrainConfig};
use crsam::model::{Activation, ModelSpec};
use crsam::optim::{Method, OptimizerConfig};

fn env_f64(key: &str, default: f64) -> f64 {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let noise = env_f64("NOISE", 0.25);
    let rho_cr = env_f64("RHO_CR", 0.10);
    let alpha = env_f64("ALPHA", 0.005);
    let beta = env_f64("BETA", 0.0005);
    for method in [Method::Sam, Method::CrSam] {
        let config = TrainConfig {
            model: ModelSpec::mlp(vec![2, 64, 64, 2], Activation::Tanh).unwrap(),
            dataset: DatasetConfig::TwoMoons { n: 2500, noise },
            split: SplitSpec { train_fraction: 0.8, seed: 1000 },
            optimizer: OptimizerConfig {
                method,
                peak_lr: 0.05,
                momentum: 0.9,
                weight_decay: 5e-4,
                rho: if method == Method::CrSam { rho_cr } else { 0.05 },
                alpha: if method == Method::CrSam { alpha } else { 0.0 },
                beta: if method == Method::CrSam { beta } else { 0.0 },
                total_epochs: 200,
                log_floor: 1e-8,
            },
            epochs: 200,
            batch_size: 128,
            seed: 0,
            diagnostics: DiagnosticsConfig { probes: 50, ..Default::default() },
            output_dir: std::env::temp_dir(),
        };
        let r = run_training(&config).unwrap();
        println!("== {method:?}");
        for rec in r.records.iter().step_by(20).chain(r.records.last()) {
            println!(
                "  e{:>3} train_loss {:.4} train_acc {:.4} test_acc {:.4} d2 {:+.3e} d1 {:+.3e} clamp {:.2}",
                rec.epoch, rec.train_loss, rec.train_acc, rec.test_acc, rec.mean_d2, rec.mean_d1,
                rec.clamp_rate
            );
        }
        let g = r.final_geometry.unwrap().test;
        println!("  final: trace {:.3} gn {:.4}", g.trace_estimate, g.grad_norm);
    }
}
