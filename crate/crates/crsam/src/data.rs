//! Datasets: deterministic synthetic generators, an IDX loader/writer, and
//! seeded batch iteration.
//!
//! Every function here is a pure function of its arguments; repeated calls
//! are bit-identical. All randomness enters through explicit seeds.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labelled set of dense real feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Row-major `len() x n_features` matrix.
    inputs: Vec<f64>,
    n_features: usize,
    labels: Vec<usize>,
    n_classes: usize,
    name: String,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f64>,
        n_features: usize,
        labels: Vec<usize>,
        n_classes: usize,
        name: impl Into<String>,
    ) -> Result<Dataset> {
        if n_features == 0 {
            return Err(Error::Contract("dataset must have n_features >= 1".into()));
        }
        if inputs.len() != labels.len() * n_features {
            return Err(Error::Contract(format!(
                "inputs length {} != {} examples x {} features",
                inputs.len(),
                labels.len(),
                n_features
            )));
        }
        if n_classes < 2 {
            return Err(Error::Contract("n_classes must be >= 2".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::Contract(format!(
                "label {bad} out of range [0, {n_classes})"
            )));
        }
        if let Some(bad) = inputs.iter().find(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite dataset input {bad}")));
        }
        Ok(Dataset {
            inputs,
            n_features,
            labels,
            n_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Materialize the whole dataset as one batch, preserving order.
    pub fn full_batch(&self) -> Batch {
        Batch {
            inputs: self.inputs.clone(),
            n_features: self.n_features,
            labels: self.labels.clone(),
        }
    }

    /// Batch holding a single example.
    pub fn example(&self, i: usize) -> Batch {
        Batch {
            inputs: self.row(i).to_vec(),
            n_features: self.n_features,
            labels: vec![self.labels[i]],
        }
    }

    fn gather(&self, indices: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch {
            inputs,
            n_features: self.n_features,
            labels,
        }
    }
}

/// One mini-batch of examples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    n_features: usize,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, n_features: usize, labels: Vec<usize>) -> Result<Batch> {
        if labels.is_empty() {
            return Err(Error::Contract("batch must hold at least one example".into()));
        }
        if inputs.len() != labels.len() * n_features {
            return Err(Error::Contract(format!(
                "batch inputs length {} != {} examples x {} features",
                inputs.len(),
                labels.len(),
                n_features
            )));
        }
        Ok(Batch {
            inputs,
            n_features,
            labels,
        })
    }

    /// Single zero example; for models that ignore their batch (quadratics).
    pub fn placeholder() -> Batch {
        Batch {
            inputs: vec![0.0],
            n_features: 1,
            labels: vec![0],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_features..(i + 1) * self.n_features]
    }
}

/// Deterministic train/test split parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

/// Split a dataset into disjoint train/test parts covering it entirely.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Contract(format!(
            "train_fraction {} not in (0, 1)",
            spec.train_fraction
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Contract("cannot split an empty dataset".into()));
    }
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    shuffle(&mut indices, &mut rng);
    let n_train = ((dataset.len() as f64) * spec.train_fraction).round() as usize;
    let n_train = n_train.clamp(1, dataset.len() - 1);
    let make = |idx: &[usize], tag: &str| {
        let b = dataset.gather(idx);
        Dataset {
            inputs: b.inputs,
            n_features: b.n_features,
            labels: b.labels,
            n_classes: dataset.n_classes,
            name: format!("{}-{}", dataset.name, tag),
        }
    };
    Ok((make(&indices[..n_train], "train"), make(&indices[n_train..], "test")))
}

/// Fisher-Yates with a pinned RNG so the permutation never depends on the
/// `rand` crate's shuffle implementation.
fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Two interleaved half-circle classes with Gaussian coordinate noise.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::Contract(format!("two-moons needs even n >= 2, got {n}")));
    }
    if noise < 0.0 {
        return Err(Error::Contract("noise must be >= 0".into()));
    }
    let m = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    let theta = |i: usize| {
        if m == 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (m - 1) as f64
        }
    };
    for i in 0..m {
        let t = theta(i);
        inputs.push(t.cos());
        inputs.push(t.sin());
        labels.push(0);
    }
    // Second moon: first arc rotated half a turn, shifted to dip to (1, -0.5).
    for i in 0..m {
        let t = theta(i);
        inputs.push(1.0 - t.cos());
        inputs.push(0.5 - t.sin());
        labels.push(1);
    }
    if noise > 0.0 {
        for x in inputs.iter_mut() {
            *x += noise * standard_normal(&mut rng);
        }
    }
    Dataset::new(inputs, 2, labels, 2, "two-moons")
}

/// Isotropic Gaussian clusters, one class per center.
pub fn gen_gaussian_blobs(n: usize, centers: &[Vec<f64>], sigma: f64, seed: u64) -> Result<Dataset> {
    if centers.len() < 2 {
        return Err(Error::Contract("blobs need at least 2 centers".into()));
    }
    if n < centers.len() {
        return Err(Error::Contract(format!(
            "blobs need n >= {} (one point per class)",
            centers.len()
        )));
    }
    if sigma < 0.0 {
        return Err(Error::Contract("sigma must be >= 0".into()));
    }
    let d = centers[0].len();
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(Error::Contract("centers must share a nonzero dimension".into()));
    }
    let k = centers.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k; // round-robin keeps counts balanced to within 1
        for &c in &centers[class] {
            let jitter = if sigma > 0.0 {
                sigma * standard_normal(&mut rng)
            } else {
                0.0
            };
            inputs.push(c + jitter);
        }
        labels.push(class);
    }
    Dataset::new(inputs, d, labels, k, "gaussian-blobs")
}

/// Two-arm Archimedean spiral; radius grows monotonically along each arm.
pub fn gen_spiral(n: usize, turns: f64, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Contract("spiral needs n >= 2".into()));
    }
    if turns <= 0.0 {
        return Err(Error::Contract("turns must be > 0".into()));
    }
    if noise < 0.0 {
        return Err(Error::Contract("noise must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    let per_arm = [(n + 1) / 2, n / 2];
    for arm in 0..2usize {
        let m = per_arm[arm];
        for i in 0..m {
            let s = (i + 1) as f64 / m as f64; // in (0, 1]
            let r = s;
            let angle = 2.0 * std::f64::consts::PI * turns * s + std::f64::consts::PI * arm as f64;
            let mut x = r * angle.cos();
            let mut y = r * angle.sin();
            if noise > 0.0 {
                x += noise * standard_normal(&mut rng);
                y += noise * standard_normal(&mut rng);
            }
            inputs.push(x);
            inputs.push(y);
            labels.push(arm);
        }
    }
    Dataset::new(inputs, 2, labels, 2, "spiral")
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> IdxReader<'a> {
    fn u32(&mut self) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                offset: self.pos as u64,
                msg: format!("truncated: expected 4 bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn payload(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                offset: self.bytes.len() as u64,
                msg: format!(
                    "truncated payload: need {} bytes from offset {}, file has {}",
                    n,
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

/// Load an IDX image/label file pair (the MNIST container format).
///
/// Pixels are scaled to [0, 1] by division by 255. `limit` truncates
/// deterministically from the front.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Dataset> {
    let image_bytes = read_file(images_path)?;
    let mut r = IdxReader {
        bytes: &image_bytes,
        pos: 0,
        path: images_path,
    };
    let magic = r.u32()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            path: images_path.to_path_buf(),
            offset: 0,
            msg: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let pixels = r.payload(count * rows * cols)?;

    let label_bytes = read_file(labels_path)?;
    let mut r = IdxReader {
        bytes: &label_bytes,
        pos: 0,
        path: labels_path,
    };
    let magic = r.u32()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            offset: 0,
            msg: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let label_count = r.u32()? as usize;
    if label_count != count {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            offset: 4,
            msg: format!("label count {label_count} != image count {count}"),
        });
    }
    let raw_labels = r.payload(count)?;

    let keep = limit.map_or(count, |l| l.min(count));
    let n_features = rows * cols;
    let inputs: Vec<f64> = pixels[..keep * n_features]
        .iter()
        .map(|&p| p as f64 / 255.0)
        .collect();
    let labels: Vec<usize> = raw_labels[..keep].iter().map(|&y| y as usize).collect();
    let n_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(inputs, n_features, labels, n_classes.max(2), "idx")
}

/// Write a dataset as an IDX image/label pair readable by [`load_idx`].
///
/// Inputs are quantized to u8 via `round(clamp(x, 0, 1) * 255)`; the image
/// tensor is written as `n x 1 x n_features`.
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let mut img = Vec::with_capacity(16 + dataset.len() * dataset.n_features());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    img.extend_from_slice(&1u32.to_be_bytes());
    img.extend_from_slice(&(dataset.n_features() as u32).to_be_bytes());
    for &x in dataset.inputs() {
        img.push((x.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let mut lab = Vec::with_capacity(8 + dataset.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    for &y in dataset.labels() {
        if y > u8::MAX as usize {
            return Err(Error::Contract(format!("label {y} does not fit in a u8")));
        }
        lab.push(y as u8);
    }
    std::fs::File::create(images_path)
        .and_then(|mut f| f.write_all(&img))
        .map_err(|e| Error::io(images_path, e))?;
    std::fs::File::create(labels_path)
        .and_then(|mut f| f.write_all(&lab))
        .map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

/// Iterator over one epoch of shuffled mini-batches.
///
/// One permutation is drawn per epoch from `epoch_seed`; the final partial
/// batch is kept, so the emitted batches concatenate to a permutation of the
/// dataset.
pub fn batch_iter(dataset: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<BatchIter<'_>> {
    if dataset.is_empty() {
        return Err(Error::Contract("cannot iterate an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Contract("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    shuffle(&mut order, &mut rng);
    Ok(BatchIter {
        dataset,
        order,
        batch_size,
        cursor: 0,
    })
}

pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.dataset.gather(&self.order[self.cursor..end]);
        self.cursor = end;
        Some(batch)
    }
}
