//! Command-line interface. Every subcommand is a thin wrapper: argument
//! validation, one library call, serialization.
//!
//! Exit codes: 0 success, 1 selfcheck failure, 2 configuration error,
//! 3 numeric divergence. Config overrides use dotted flags mirroring the
//! config keys (`--optimizer.rho 0.15`). The `CRSAM_OUTPUT_DIR` environment
//! variable overrides the output directory and nothing else.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::curvature::DatasetTag;
use crate::data::{gen_gaussian_blobs, gen_spiral, gen_two_moons, write_idx};
use crate::error::{Error, Result};
use crate::harness::{
    ar_curve, build_datasets, landscape_csv, landscape_grid, load_checkpoint, run_training,
    to_json_17, write_run, TrainConfig,
};
use crate::selfcheck::{all_pass, run_selfcheck, Tamper};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const OUTPUT_DIR_ENV: &str = "CRSAM_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "crsam",
    version,
    about = "Desk-scale training lab for SAM and curvature-regularized SAM"
)]
struct Cli {
    /// Print per-epoch progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from a JSON config and write run artifacts.
    Train(TrainArgs),
    /// Curvature report for a saved checkpoint.
    Geometry(GeometryArgs),
    /// Loss-landscape grid around a saved checkpoint.
    Landscape(LandscapeArgs),
    /// Approximation-ratio reports over saved checkpoints.
    Ar(ArArgs),
    /// Generate a synthetic dataset as an IDX image/label pair.
    GenData(GenDataArgs),
    /// Run the analytic-oracle verification suite.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Path to the run config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path overrides: `--optimizer.rho 0.15 --epochs 50 ...`
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct GeometryArgs {
    /// Checkpoint file written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run config naming the dataset to evaluate on.
    #[arg(long)]
    config: PathBuf,
    /// Which split to evaluate: train or test.
    #[arg(long, default_value = "test")]
    tag: String,
    #[arg(long, default_value_t = 100)]
    probes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LandscapeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "test")]
    tag: String,
    #[arg(long, default_value_t = 1.0)]
    extent: f64,
    /// Grid resolution per axis; must be odd.
    #[arg(long, default_value_t = 25)]
    resolution: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ArArgs {
    #[arg(long)]
    config: PathBuf,
    /// Two or more checkpoint files, in epoch order.
    #[arg(long, num_args = 2.., required = true)]
    checkpoints: Vec<PathBuf>,
    /// Perturbation radius; defaults to the config's optimizer.rho.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Generator: two-moons, spiral, or blobs.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Spiral turns (spiral only).
    #[arg(long, default_value_t = 1.0)]
    turns: f64,
    /// Cluster spread (blobs only).
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Blob centers as JSON, e.g. "[[0,0],[1,1]]" (blobs only).
    #[arg(long)]
    centers: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_images: PathBuf,
    #[arg(long)]
    out_labels: PathBuf,
}

#[derive(Args, Debug)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Deliberately corrupt one gradient component (testing aid: the
    /// gradient check must then fail).
    #[arg(long, hide = true)]
    tamper_gradient: bool,
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version via this path with success codes.
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let verbose = cli.verbose;
    let result = match cli.command {
        Command::Train(args) => cmd_train(args, verbose),
        Command::Geometry(args) => cmd_geometry(args),
        Command::Landscape(args) => cmd_landscape(args),
        Command::Ar(args) => cmd_ar(args),
        Command::GenData(args) => cmd_gen_data(args),
        Command::Selfcheck(args) => return cmd_selfcheck(args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Contract(_)
        | Error::Format { .. }
        | Error::Io { .. }
        | Error::Json(_) => EXIT_CONFIG,
        Error::Numeric(_)
        | Error::NonFiniteStep { .. }
        | Error::Divergence { .. }
        | Error::Estimation(_) => EXIT_NUMERIC,
    }
}

/// Load a config, apply `--a.b.c value` overrides, then the output-dir
/// environment override.
fn load_config_with_overrides(path: &PathBuf, overrides: &[String]) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    for pair in overrides.chunks(2) {
        let [flag, raw] = pair else {
            return Err(Error::Config(format!(
                "override flag {} is missing its value",
                pair[0]
            )));
        };
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("override {flag} must start with --")))?;
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        let mut slot = &mut value;
        for segment in key.split('.') {
            let obj = slot.as_object_mut().ok_or_else(|| {
                Error::Config(format!("override path {key} does not address an object"))
            })?;
            slot = obj
                .entry(segment.to_string())
                .or_insert(serde_json::Value::Null);
        }
        *slot = parsed;
    }
    let mut config: TrainConfig = serde_json::from_value(value)?;
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        config.output_dir = PathBuf::from(dir);
    }
    Ok(config)
}

fn cmd_train(args: TrainArgs, verbose: bool) -> Result<()> {
    let config = load_config_with_overrides(&args.config, &args.overrides)?;
    config.validate()?;
    if verbose {
        eprintln!(
            "training {} epochs ({:?}) into {}",
            config.epochs,
            config.optimizer.method,
            config.output_dir.display()
        );
    }
    match run_training(&config) {
        Ok(result) => {
            write_run(&result, &config.output_dir)?;
            if verbose {
                if let Some(last) = result.records.last() {
                    eprintln!(
                        "done: train_acc {:.4} test_acc {:.4}",
                        last.train_acc, last.test_acc
                    );
                }
            }
            Ok(())
        }
        Err(Error::Divergence {
            epoch,
            last_good,
            partial,
        }) => {
            // Preserve the metrics up to the last good epoch.
            write_run(&partial, &config.output_dir)?;
            Err(Error::Divergence {
                epoch,
                last_good,
                partial,
            })
        }
        Err(e) => Err(e),
    }
}

fn parse_tag(tag: &str) -> Result<DatasetTag> {
    match tag {
        "train" => Ok(DatasetTag::Train),
        "test" => Ok(DatasetTag::Test),
        other => Err(Error::Config(format!("unknown dataset tag {other:?}"))),
    }
}

fn pick_split(
    config: &TrainConfig,
    tag: DatasetTag,
) -> Result<crate::data::Dataset> {
    let (train, test) = build_datasets(config)?;
    Ok(match tag {
        DatasetTag::Train => train,
        DatasetTag::Test => test,
    })
}

fn write_text(path: &PathBuf, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_geometry(args: GeometryArgs) -> Result<()> {
    let tag = parse_tag(&args.tag)?;
    let cp = load_checkpoint(&args.checkpoint)?;
    let config = crate::harness::load_config(&args.config)?;
    let dataset = pick_split(&config, tag)?;
    let report = crate::curvature::geometry_report(
        &cp.model, &cp.params, &dataset, args.probes, args.seed, tag,
    )?;
    write_text(&args.out, &to_json_17(&report)?)
}

fn cmd_landscape(args: LandscapeArgs) -> Result<()> {
    let tag = parse_tag(&args.tag)?;
    let cp = load_checkpoint(&args.checkpoint)?;
    let config = crate::harness::load_config(&args.config)?;
    let dataset = pick_split(&config, tag)?;
    let grid = landscape_grid(
        &cp.model,
        &cp.params,
        &dataset,
        args.extent,
        args.resolution,
        args.seed,
    )?;
    write_text(&args.out, &landscape_csv(&grid))
}

fn cmd_ar(args: ArArgs) -> Result<()> {
    let config = crate::harness::load_config(&args.config)?;
    let dataset = pick_split(&config, DatasetTag::Train)?;
    let mut checkpoints = Vec::with_capacity(args.checkpoints.len());
    let mut model = None;
    for path in &args.checkpoints {
        let cp = load_checkpoint(path)?;
        match &model {
            None => model = Some(cp.model.clone()),
            Some(m) if *m != cp.model => {
                return Err(Error::Config(format!(
                    "checkpoint {} uses a different model than the first",
                    path.display()
                )));
            }
            Some(_) => {}
        }
        checkpoints.push(crate::harness::Checkpoint {
            epoch: cp.epoch,
            params: cp.params,
        });
    }
    let model = model.expect("at least two checkpoints are required");
    let rho = args.rho.unwrap_or(config.optimizer.rho);
    let curve = ar_curve(&model, &checkpoints, &dataset, rho, args.k, args.n, args.seed)?;
    write_text(&args.out, &to_json_17(&curve)?)
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let dataset = match args.kind.as_str() {
        "two-moons" => gen_two_moons(args.n, args.noise, args.seed)?,
        "spiral" => gen_spiral(args.n, args.turns, args.noise, args.seed)?,
        "blobs" => {
            let raw = args.centers.as_deref().ok_or_else(|| {
                Error::Config("blobs need --centers, e.g. \"[[0,0],[1,1]]\"".into())
            })?;
            let centers: Vec<Vec<f64>> = serde_json::from_str(raw)?;
            gen_gaussian_blobs(args.n, &centers, args.sigma, args.seed)?
        }
        other => return Err(Error::Config(format!("unknown generator {other:?}"))),
    };
    write_idx(&dataset, &args.out_images, &args.out_labels)
}

fn cmd_selfcheck(args: SelfcheckArgs) -> i32 {
    let tamper = if args.tamper_gradient {
        Tamper::PerturbGradient
    } else {
        Tamper::None
    };
    let outcomes = run_selfcheck(args.seed, tamper);
    println!("{:<28} {:>6} {:>8}  detail", "check", "status", "ms");
    for o in &outcomes {
        println!(
            "{:<28} {:>6} {:>8}  {}",
            o.name,
            if o.passed { "PASS" } else { "FAIL" },
            o.millis,
            o.detail
        );
    }
    if all_pass(&outcomes) {
        println!("selfcheck: all {} checks passed", outcomes.len());
        EXIT_OK
    } else {
        let failed: Vec<&str> = outcomes
            .iter()
            .filter(|o| !o.passed)
            .map(|o| o.name)
            .collect();
        eprintln!("selfcheck: FAILED: {}", failed.join(", "));
        EXIT_CHECK_FAILED
    }
}
