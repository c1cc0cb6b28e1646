//! Run orchestration: declarative configs, the training loop, scheduled
//! diagnostics, checkpoints, and file outputs.
//!
//! A run is fully determined by its config: datasets, initialization, batch
//! order, and every diagnostic derive their seeds from `config.seed`, so
//! configs differing only in `optimizer.method` consume identical batch
//! sequences. Training never reads diagnostics; geometry and AR reports are
//! post-processing over snapshots.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::curvature::{
    approximation_ratio, geometry_report, ARReport, ArOptions, CurvatureReport, DatasetTag,
};
use crate::data::{batch_iter, gen_gaussian_blobs, gen_spiral, gen_two_moons, load_idx, split,
    Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{batch_metrics, init_params, ModelSpec, Objective, ParamVector};
use crate::optim::{cosine_lr, crsam_step, sam_step, sgd_step, Method, OptimizerConfig,
    OptimizerState, StepOutcome};
use crate::seeds::derive_seed;

const SALT_DATA: u64 = 0xd47a;
const SALT_INIT: u64 = 0x1417;
const SALT_EPOCH: u64 = 0xe70c;
const SALT_AR: u64 = 0xa4;
const SALT_GEOMETRY: u64 = 0x6e0;

/// Batch-order seed for one epoch. A function of the run seed and the epoch
/// only, so configs differing in anything else (notably the optimizer)
/// consume identical batch sequences.
pub fn epoch_seed(run_seed: u64, epoch: usize) -> u64 {
    derive_seed(run_seed, SALT_EPOCH ^ (epoch as u64).rotate_left(17))
}

/// Dataset source named by a run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetConfig {
    TwoMoons {
        n: usize,
        noise: f64,
    },
    GaussianBlobs {
        n: usize,
        centers: Vec<Vec<f64>>,
        sigma: f64,
    },
    Spiral {
        n: usize,
        turns: f64,
        noise: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Snapshot/geometry cadence in epochs; 0 disables snapshots.
    #[serde(default)]
    pub geometry_every: usize,
    /// AR cadence in epochs; 0 disables AR reports.
    #[serde(default)]
    pub ar_every: usize,
    #[serde(default = "default_ar_k")]
    pub ar_k: usize,
    #[serde(default = "default_ar_samples")]
    pub ar_samples: usize,
    /// Hutchinson probe count for geometry reports.
    #[serde(default = "default_probes")]
    pub probes: usize,
}

fn default_ar_k() -> usize {
    20
}
fn default_ar_samples() -> usize {
    500
}
fn default_probes() -> usize {
    100
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            geometry_every: 0,
            ar_every: 0,
            ar_k: default_ar_k(),
            ar_samples: default_ar_samples(),
            probes: default_probes(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub dataset: DatasetConfig,
    pub split: SplitSpec,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    pub output_dir: PathBuf,
}

impl TrainConfig {
    /// The cosine schedule always spans the run: `optimizer.total_epochs` is
    /// overwritten with `epochs`, and the echoed config carries that value.
    pub fn materialized(&self) -> TrainConfig {
        let mut c = self.clone();
        c.optimizer.total_epochs = c.epochs;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.model.validate()?;
        self.materialized().optimizer.validate()?;
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Build the train/test pair a config names. Generator seeds derive from
/// `config.seed`, the split from `config.split.seed`.
pub fn build_datasets(config: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let data_seed = derive_seed(config.seed, SALT_DATA);
    let full = match &config.dataset {
        DatasetConfig::TwoMoons { n, noise } => gen_two_moons(*n, *noise, data_seed)?,
        DatasetConfig::GaussianBlobs { n, centers, sigma } => {
            gen_gaussian_blobs(*n, centers, *sigma, data_seed)?
        }
        DatasetConfig::Spiral { n, turns, noise } => gen_spiral(*n, *turns, *noise, data_seed)?,
        DatasetConfig::Idx {
            images,
            labels,
            limit,
        } => load_idx(images, labels, *limit)?,
    };
    split(&full, &config.split)
}

/// One row of metrics.csv.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    /// 1-based epoch number (epochs completed).
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub lr: f64,
    pub mean_d1: f64,
    pub mean_d2: f64,
    pub clamp_rate: f64,
    /// Wall-clock duration of the epoch. The only nondeterministic field.
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: ParamVector,
}

/// Checkpoint file contents; carries the model so diagnostics can run
/// without the original config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub epoch: usize,
    pub model: ModelSpec,
    pub params: ParamVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryPair {
    pub train: CurvatureReport,
    pub test: CurvatureReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArPoint {
    pub epoch: usize,
    #[serde(flatten)]
    pub report: ARReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub records: Vec<MetricRecord>,
    /// Absent only in divergence partials.
    pub final_geometry: Option<GeometryPair>,
    pub ar_curve: Vec<ArPoint>,
    pub checkpoints: Vec<Checkpoint>,
    pub config_echo: TrainConfig,
}

/// Execute a full training run. Deterministic given the config, except for
/// the `wall_ms` telemetry column.
pub fn run_training(config: &TrainConfig) -> Result<RunResult> {
    let config = config.materialized();
    config.validate()?;
    let (train, test) = build_datasets(&config)?;
    let model = &config.model;
    let mut params = init_params(model, derive_seed(config.seed, SALT_INIT))?;
    let mut state = OptimizerState::new(&params);

    let snapshot_due = |epoch1: usize| -> bool {
        let d = &config.diagnostics;
        (d.geometry_every > 0 && epoch1 % d.geometry_every == 0)
            || (d.ar_every > 0 && epoch1 % d.ar_every == 0)
    };

    let mut records: Vec<MetricRecord> = Vec::with_capacity(config.epochs);
    let mut checkpoints: Vec<Checkpoint> = Vec::new();
    let train_batch = train.full_batch();
    let test_batch = test.full_batch();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        state.epoch = epoch;
        let lr = cosine_lr(epoch, config.optimizer.total_epochs, config.optimizer.peak_lr)?;

        let mut d1_sum = 0.0;
        let mut d2_sum = 0.0;
        let mut probe_steps = 0usize;
        let mut clamp_events = 0usize;
        let mut steps = 0usize;

        for batch in batch_iter(&train, config.batch_size, epoch_seed(config.seed, epoch))? {
            let stepped: Result<StepOutcome> = match config.optimizer.method {
                Method::Sgd => sgd_step(model, &params, &batch, &config.optimizer, &state),
                Method::Sam => sam_step(model, &params, &batch, &config.optimizer, &state),
                Method::CrSam => crsam_step(model, &params, &batch, &config.optimizer, &state),
            };
            let outcome = match stepped {
                Ok(o) => o,
                Err(Error::NonFiniteStep { .. } | Error::Numeric(_)) => {
                    return Err(diverged(epoch + 1, records, checkpoints, config));
                }
                Err(e) => return Err(e),
            };
            if let (Some(d1), Some(d2)) = (outcome.report.d1, outcome.report.d2) {
                d1_sum += d1;
                d2_sum += d2;
                probe_steps += 1;
            }
            if outcome.report.d1_clamped || outcome.report.d2_clamped {
                clamp_events += 1;
            }
            steps += 1;
            params = outcome.new_params;
            state = outcome.new_state;
        }

        let train_metrics = match batch_metrics(model, &params, &train_batch) {
            Ok(m) => m,
            Err(Error::Numeric(_)) => {
                return Err(diverged(epoch + 1, records, checkpoints, config));
            }
            Err(e) => return Err(e),
        };
        let test_metrics = match batch_metrics(model, &params, &test_batch) {
            Ok(m) => m,
            Err(Error::Numeric(_)) => {
                return Err(diverged(epoch + 1, records, checkpoints, config));
            }
            Err(e) => return Err(e),
        };

        let epoch1 = epoch + 1;
        records.push(MetricRecord {
            epoch: epoch1,
            train_loss: train_metrics.loss,
            train_acc: train_metrics.accuracy,
            test_loss: test_metrics.loss,
            test_acc: test_metrics.accuracy,
            lr,
            mean_d1: if probe_steps > 0 { d1_sum / probe_steps as f64 } else { 0.0 },
            mean_d2: if probe_steps > 0 { d2_sum / probe_steps as f64 } else { 0.0 },
            clamp_rate: if steps > 0 { clamp_events as f64 / steps as f64 } else { 0.0 },
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        if snapshot_due(epoch1) {
            checkpoints.push(Checkpoint {
                epoch: epoch1,
                params: params.clone(),
            });
        }
    }

    let mut ar_curve = Vec::new();
    if config.diagnostics.ar_every > 0 {
        let ar_seed = derive_seed(config.seed, SALT_AR);
        for cp in &checkpoints {
            if cp.epoch % config.diagnostics.ar_every == 0 {
                let report = approximation_ratio(
                    model,
                    &cp.params,
                    &train,
                    config.optimizer.rho,
                    config.diagnostics.ar_k,
                    config.diagnostics.ar_samples,
                    ar_seed,
                    ArOptions::default(),
                )?;
                ar_curve.push(ArPoint {
                    epoch: cp.epoch,
                    report,
                });
            }
        }
    }

    let geo_seed = derive_seed(config.seed, SALT_GEOMETRY);
    let final_geometry = Some(GeometryPair {
        train: geometry_report(
            model,
            &params,
            &train,
            config.diagnostics.probes,
            geo_seed,
            DatasetTag::Train,
        )?,
        test: geometry_report(
            model,
            &params,
            &test,
            config.diagnostics.probes,
            geo_seed,
            DatasetTag::Test,
        )?,
    });

    Ok(RunResult {
        records,
        final_geometry,
        ar_curve,
        checkpoints,
        config_echo: config,
    })
}

fn diverged(
    epoch: usize,
    records: Vec<MetricRecord>,
    checkpoints: Vec<Checkpoint>,
    config: TrainConfig,
) -> Error {
    let last_good = records.last().map(|r| r.epoch);
    Error::Divergence {
        epoch,
        last_good,
        partial: Box::new(RunResult {
            records,
            final_geometry: None,
            ar_curve: Vec::new(),
            checkpoints,
            config_echo: config,
        }),
    }
}

/// AR reports for a sequence of saved checkpoints, all on the same seed
/// basis so the curve is comparable across epochs.
pub fn ar_curve<M: Objective + ?Sized>(
    model: &M,
    checkpoints: &[Checkpoint],
    dataset: &Dataset,
    rho: f64,
    k_steps: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<ArPoint>> {
    if checkpoints.len() < 2 {
        return Err(Error::Contract("ar_curve needs at least 2 checkpoints".into()));
    }
    checkpoints
        .iter()
        .map(|cp| {
            approximation_ratio(
                model,
                &cp.params,
                dataset,
                rho,
                k_steps,
                n_samples,
                seed,
                ArOptions::default(),
            )
            .map(|report| ArPoint {
                epoch: cp.epoch,
                report,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeCell {
    pub i: usize,
    pub j: usize,
    pub a: f64,
    pub b: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub resolution: usize,
    pub extent: f64,
    pub cells: Vec<LandscapeCell>,
    /// Layer indices whose direction segment kept its raw scale because the
    /// parameter segment had zero norm.
    pub skipped_segments: Vec<usize>,
}

/// Loss surface over a plane spanned by two random directions.
///
/// Directions are Gaussian, rescaled per layer segment to that segment's
/// parameter norm, then the second is orthogonalized against the first (in
/// that order, so the pair is exactly orthogonal). The grid covers
/// `[-extent, extent]^2`; `resolution` must be odd so the center cell sits
/// exactly at the unperturbed parameters.
pub fn landscape_grid<M: Objective + ?Sized>(
    model: &M,
    params: &ParamVector,
    dataset: &Dataset,
    extent: f64,
    resolution: usize,
    seed: u64,
) -> Result<LandscapeGrid> {
    if resolution % 2 == 0 || resolution == 0 {
        return Err(Error::Contract(format!(
            "landscape resolution must be odd, got {resolution}"
        )));
    }
    if !(extent > 0.0) {
        return Err(Error::Contract("landscape extent must be > 0".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Contract("landscape needs a nonempty dataset".into()));
    }

    use rand::SeedableRng;
    use rand_distr::Distribution;
    let dim = model.dim();
    let draw = |salt: u64| -> ParamVector {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, salt));
        let v: Vec<f64> = (0..dim)
            .map(|_| rand_distr::StandardNormal.sample(&mut rng))
            .collect();
        ParamVector::from_f64(v)
    };
    let mut dir_a = draw(1);
    let mut dir_b = draw(2);

    let mut skipped = Vec::new();
    for (idx, range) in model.layer_ranges().iter().enumerate() {
        let seg_norm = |v: &ParamVector| -> f64 {
            v.as_slice()[range.clone()]
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
        };
        let wn = seg_norm(params);
        if wn == 0.0 {
            skipped.push(idx);
            continue;
        }
        for dir in [&mut dir_a, &mut dir_b] {
            let dn = seg_norm(dir);
            if dn > 0.0 {
                let scale = wn / dn;
                for x in &mut dir.values_mut()[range.clone()] {
                    *x *= scale;
                }
            }
        }
    }
    // Orthogonalize after normalization so the pair is exactly orthogonal.
    let coeff = dir_b.dot(&dir_a) / dir_a.dot(&dir_a);
    dir_b.axpy(-coeff, &dir_a);

    let batch = dataset.full_batch();
    let half = (resolution / 2) as f64;
    let coord = |idx: usize| -> f64 {
        if resolution == 1 {
            0.0
        } else {
            extent * ((idx as f64 - half) / half)
        }
    };
    let mut cells = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        let a = coord(i);
        let row_base = params.add_scaled(a, &dir_a);
        for j in 0..resolution {
            let b = coord(j);
            let point = row_base.add_scaled(b, &dir_b);
            let loss = model.loss(&point, &batch)?;
            cells.push(LandscapeCell { i, j, a, b, loss });
        }
    }
    Ok(LandscapeGrid {
        resolution,
        extent,
        cells,
        skipped_segments: skipped,
    })
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Serialize as JSON with every float printed to 17 significant digits
/// (round-trip exact).
pub fn to_json_17<T: Serialize>(value: &T) -> Result<String> {
    struct Sig17;
    impl serde_json::ser::Formatter for Sig17 {
        fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
        where
            W: std::io::Write + ?Sized,
        {
            write!(writer, "{value:.16e}")
        }
    }
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Sig17);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serde_json emits utf-8"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub const METRICS_HEADER: &str =
    "epoch,train_loss,train_acc,test_loss,test_acc,lr,mean_d1,mean_d2,clamp_rate,wall_ms";

pub fn metrics_csv(records: &[MetricRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.epoch,
            fmt_float(r.train_loss),
            fmt_float(r.train_acc),
            fmt_float(r.test_loss),
            fmt_float(r.test_acc),
            fmt_float(r.lr),
            fmt_float(r.mean_d1),
            fmt_float(r.mean_d2),
            fmt_float(r.clamp_rate),
            fmt_float(r.wall_ms),
        ));
    }
    out
}

pub fn landscape_csv(grid: &LandscapeGrid) -> String {
    let mut out = String::from("i,j,a,b,loss\n");
    for c in &grid.cells {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.i,
            c.j,
            fmt_float(c.a),
            fmt_float(c.b),
            fmt_float(c.loss),
        ));
    }
    out
}

/// Write metrics.csv, geometry.json, ar.json, config.json, and checkpoint
/// files under `output_dir`.
pub fn write_run(result: &RunResult, output_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    write_text(&output_dir.join("metrics.csv"), &metrics_csv(&result.records))?;
    if let Some(geometry) = &result.final_geometry {
        write_text(&output_dir.join("geometry.json"), &to_json_17(geometry)?)?;
    }
    write_text(&output_dir.join("ar.json"), &to_json_17(&result.ar_curve)?)?;
    write_text(
        &output_dir.join("config.json"),
        &to_json_17(&result.config_echo)?,
    )?;
    if !result.checkpoints.is_empty() {
        let dir = output_dir.join("checkpoints");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for cp in &result.checkpoints {
            let file = CheckpointFile {
                epoch: cp.epoch,
                model: result.config_echo.model.clone(),
                params: cp.params.clone(),
            };
            write_text(
                &dir.join(format!("epoch_{:04}.json", cp.epoch)),
                &to_json_17(&file)?,
            )?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cp: CheckpointFile = serde_json::from_str(&text)?;
    if cp.params.dim() != cp.model.param_count() {
        return Err(Error::Config(format!(
            "checkpoint params dimension {} does not match its model ({})",
            cp.params.dim(),
            cp.model.param_count()
        )));
    }
    Ok(cp)
}
