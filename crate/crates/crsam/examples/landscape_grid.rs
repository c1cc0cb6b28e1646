//! Export a loss-landscape grid (layer-normalized random plane) around a
//! trained model, for plotting by any CSV consumer.
//!
//!     cargo run --release --example landscape_grid [out.csv]

use crsam::data::SplitSpec;
use crsam::harness::{
    build_datasets, landscape_csv, landscape_grid, run_training, DatasetConfig,
    DiagnosticsConfig, TrainConfig,
};
use crsam::model::{Activation, ModelSpec};
use crsam::optim::OptimizerConfig;

fn main() -> crsam::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "landscape.csv".into());
    let config = TrainConfig {
        model: ModelSpec::mlp(vec![2, 24, 2], Activation::Tanh)?,
        dataset: DatasetConfig::TwoMoons { n: 400, noise: 0.25 },
        split: SplitSpec {
            train_fraction: 0.8,
            seed: 5,
        },
        optimizer: OptimizerConfig::preset("desk-sam").unwrap(),
        epochs: 40,
        batch_size: 64,
        seed: 2,
        diagnostics: DiagnosticsConfig {
            geometry_every: 40, // snapshot the final parameters
            ..Default::default()
        },
        output_dir: std::env::temp_dir().join("crsam-landscape-example"),
    };
    let result = run_training(&config)?;
    let (_, test) = build_datasets(&result.config_echo)?;
    let params = result.checkpoints.last().expect("final snapshot").params.clone();
    let grid = landscape_grid(&config.model, &params, &test, 1.0, 25, 9)?;
    std::fs::write(&out, landscape_csv(&grid)).expect("write csv");
    let center = grid.cells.iter().find(|c| c.a == 0.0 && c.b == 0.0).unwrap();
    let rim = grid.cells.iter().map(|c| c.loss).fold(f64::MIN, f64::max);
    println!("wrote {} cells to {out}", grid.cells.len());
    println!("center loss {:.4}, max loss on the grid {:.4}", center.loss, rim);
    Ok(())
}
