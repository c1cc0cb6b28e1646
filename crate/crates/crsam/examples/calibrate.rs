//! Scratch calibration harness for the two-moons experiments (temporary).

use crsam::data::SplitSpec;
use crsam::harness::{run_training, DatasetConfig, DiagnosticsConfig, TrainConfig};
use crsam::model::{Activation, ModelSpec};
use crsam::optim::{Method, OptimizerConfig};
use rayon::prelude::*;

fn env_f64(key: &str, default: f64) -> f64 {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}
fn env_usize(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let noise = env_f64("NOISE", 0.25);
    let lr = env_f64("LR", 0.05);
    let wd = env_f64("WD", 5e-4);
    let rho_sam = env_f64("RHO_SAM", 0.05);
    let rho_cr = env_f64("RHO_CR", 0.10);
    let alpha = env_f64("ALPHA", 0.1);
    let beta = env_f64("BETA", 0.01);
    let epochs = env_usize("EPOCHS", 200);
    let n_seeds = env_usize("SEEDS", 5);
    let probes = env_usize("PROBES", 100);
    let batch = env_usize("BATCH", 128);
    let floor = env_f64("FLOOR", 1e-8);

    let methods = [Method::Sgd, Method::Sam, Method::CrSam];
    let jobs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| (0..n_seeds as u64).map(move |s| (m, s)))
        .collect();

    let results: Vec<(Method, u64, f64, f64, f64, f64, f64)> = jobs
        .par_iter()
        .map(|&(method, seed)| {
            let config = TrainConfig {
                model: ModelSpec::mlp(vec![2, 64, 64, 2], Activation::Tanh).unwrap(),
                dataset: DatasetConfig::TwoMoons { n: 2500, noise },
                split: SplitSpec { train_fraction: 0.8, seed: 1000 + seed },
                optimizer: OptimizerConfig {
                    method,
                    peak_lr: lr,
                    momentum: 0.9,
                    weight_decay: wd,
                    rho: if method == Method::CrSam { rho_cr } else { rho_sam },
                    alpha: if method == Method::CrSam { alpha } else { 0.0 },
                    beta: if method == Method::CrSam { beta } else { 0.0 },
                    total_epochs: epochs,
                    log_floor: floor,
                },
                epochs,
                batch_size: batch,
                seed,
                diagnostics: DiagnosticsConfig {
                    geometry_every: 0,
                    ar_every: 0,
                    probes,
                    ..Default::default()
                },
                output_dir: std::env::temp_dir(),
            };
            let r = run_training(&config).expect("run");
            let last = r.records.last().unwrap();
            let g = r.final_geometry.unwrap();
            let clamp: f64 =
                r.records.iter().map(|x| x.clamp_rate).sum::<f64>() / r.records.len() as f64;
            (
                method,
                seed,
                last.test_acc,
                g.test.trace_estimate,
                g.test.grad_norm,
                g.test.top_eigenvalue,
                clamp,
            )
        })
        .collect();

    for &m in &methods {
        let rows: Vec<_> = results.iter().filter(|r| r.0 == m).collect();
        let mean = |f: &dyn Fn(&&(Method, u64, f64, f64, f64, f64, f64)) -> f64| {
            rows.iter().map(f).sum::<f64>() / rows.len() as f64
        };
        println!(
            "{:?}: acc={:.4} trace={:.3} grad_norm={:.4} top={:.3} clamp={:.3}",
            m,
            mean(&|r| r.2),
            mean(&|r| r.3),
            mean(&|r| r.4),
            mean(&|r| r.5),
            mean(&|r| r.6),
        );
        for r in &rows {
            println!(
                "   seed {}: acc={:.4} trace={:.2} gn={:.4} top={:.2}",
                r.1, r.2, r.3, r.4, r.5
            );
        }
    }
}
