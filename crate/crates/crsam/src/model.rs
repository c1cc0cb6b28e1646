//! Differentiable models over flat parameter vectors.
//!
//! Three model kinds are supported: an analytic quadratic `L(w) = 1/2 w'Aw + b'w`
//! (the oracle workhorse: its loss, gradient, and Hessian are closed-form),
//! a linear-softmax classifier, and a dense MLP with relu/tanh hidden
//! activations. Classifier losses are mean cross-entropy with max-subtraction
//! log-sum-exp.
//!
//! Loss and gradient evaluation is a pure function of `(spec, params, batch)`:
//! no internal mutable state, safe to call concurrently on shared params.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::dd::Dd;
use crate::error::{Error, Result};

/// Storage precision tag for parameter vectors. Arithmetic always runs in
/// f64; the `F32` tag rounds stored entries to f32 precision after every
/// update, modelling a 32-bit training loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

/// Flat, ordered vector of model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    dtype: Dtype,
}

impl ParamVector {
    pub fn from_f64(values: Vec<f64>) -> ParamVector {
        ParamVector {
            values,
            dtype: Dtype::F64,
        }
    }

    pub fn with_dtype(mut values: Vec<f64>, dtype: Dtype) -> ParamVector {
        if dtype == Dtype::F32 {
            for v in &mut values {
                *v = *v as f32 as f64;
            }
        }
        ParamVector { values, dtype }
    }

    pub fn zeros(dim: usize, dtype: Dtype) -> ParamVector {
        ParamVector {
            values: vec![0.0; dim],
            dtype,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values.clone()
    }

    fn quantize(&mut self) {
        if self.dtype == Dtype::F32 {
            for v in &mut self.values {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self + a * x` as a new vector (dtype inherited from `self`).
    pub fn add_scaled(&self, a: f64, x: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.dim(), x.dim());
        let mut out = self.clone();
        out.axpy(a, x);
        out
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &ParamVector) {
        debug_assert_eq!(self.dim(), x.dim());
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
        self.quantize();
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
        self.quantize();
    }

    pub fn scaled(&self, c: f64) -> ParamVector {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Exact bitwise equality (distinguishes -0.0 from 0.0, unlike `==`).
    pub fn bits_eq(&self, other: &ParamVector) -> bool {
        self.dtype == other.dtype
            && self.dim() == other.dim()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn values_mut(&mut self) -> &mut Vec<f64> {
        &mut self.values
    }
}

/// Loss and gradient at a point.
#[derive(Clone, Debug)]
pub struct GradEval {
    pub loss: f64,
    pub grad: ParamVector,
}

/// Losses at `w`, `w + rho v`, `w - rho v` plus their first and second
/// differences, computed in one call so implementations can control the
/// cancellation error of the differences.
#[derive(Clone, Copy, Debug)]
pub struct LossTriple {
    pub center: f64,
    pub plus: f64,
    pub minus: f64,
    /// `L(w + rho v) - L(w - rho v)`
    pub d1: f64,
    /// `L(w + rho v) + L(w - rho v) - 2 L(w)`
    pub d2: f64,
}

/// A differentiable scalar loss over (params, batch).
pub trait Objective: Sync {
    /// Parameter dimension.
    fn dim(&self) -> usize;

    fn loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64>;

    fn loss_and_grad(&self, params: &ParamVector, batch: &Batch) -> Result<GradEval>;

    /// Loss at `w` and `w ± rho v` with stable differences.
    ///
    /// The default takes three plain evaluations; the quadratic model
    /// overrides it with a double-double path because its probe contracts
    /// demand second differences accurate to 1e-8 relative at rho = 1e-4.
    fn loss_triple(
        &self,
        params: &ParamVector,
        batch: &Batch,
        v: &ParamVector,
        rho: f64,
    ) -> Result<LossTriple> {
        let plus = self.loss(&params.add_scaled(rho, v), batch)?;
        let minus = self.loss(&params.add_scaled(-rho, v), batch)?;
        let center = self.loss(params, batch)?;
        Ok(LossTriple {
            center,
            plus,
            minus,
            d1: plus - minus,
            d2: (plus - center) + (minus - center),
        })
    }

    /// True when [`Objective::loss_triple`] is more accurate than
    /// differencing three plain loss values (and thus worth an extra call).
    fn loss_triple_is_specialized(&self) -> bool {
        false
    }

    /// Index ranges of the flat parameter vector belonging to each layer
    /// (weights and bias of one dense layer form one segment).
    fn layer_ranges(&self) -> Vec<Range<usize>> {
        vec![0..self.dim()]
    }
}

/// Hidden-layer activation for MLP models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Model architecture plus any analytic payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// `L(w) = 1/2 w'Aw + b'w`; ignores its batch. `start` seeds
    /// `init_params` (defaults to the origin).
    Quadratic {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        start: Option<Vec<f64>>,
    },
    LinearSoftmax {
        n_features: usize,
        n_classes: usize,
    },
    Mlp {
        widths: Vec<usize>,
        activation: Activation,
    },
}

impl ModelSpec {
    pub fn quadratic(matrix: Vec<Vec<f64>>, offset: Vec<f64>) -> Result<ModelSpec> {
        let spec = ModelSpec::Quadratic {
            matrix,
            offset,
            start: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn quadratic_diag(diag: &[f64]) -> ModelSpec {
        let p = diag.len();
        let mut matrix = vec![vec![0.0; p]; p];
        for (i, &d) in diag.iter().enumerate() {
            matrix[i][i] = d;
        }
        ModelSpec::Quadratic {
            matrix,
            offset: vec![0.0; p],
            start: None,
        }
    }

    pub fn mlp(widths: Vec<usize>, activation: Activation) -> Result<ModelSpec> {
        let spec = ModelSpec::Mlp { widths, activation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Quadratic { matrix, offset, start } => {
                let p = offset.len();
                if p == 0 {
                    return Err(Error::Config("quadratic dimension must be >= 1".into()));
                }
                if matrix.len() != p || matrix.iter().any(|row| row.len() != p) {
                    return Err(Error::Config(format!(
                        "quadratic matrix must be {p}x{p} to match the offset"
                    )));
                }
                for i in 0..p {
                    for j in 0..i {
                        if matrix[i][j] != matrix[j][i] {
                            return Err(Error::Config(format!(
                                "quadratic matrix not symmetric at ({i},{j})"
                            )));
                        }
                    }
                }
                if let Some(s) = start {
                    if s.len() != p {
                        return Err(Error::Config("quadratic start has wrong dimension".into()));
                    }
                }
                Ok(())
            }
            ModelSpec::LinearSoftmax { n_features, n_classes } => {
                if *n_features == 0 {
                    return Err(Error::Config("linear-softmax needs n_features >= 1".into()));
                }
                if *n_classes < 2 {
                    return Err(Error::Config("linear-softmax needs n_classes >= 2".into()));
                }
                Ok(())
            }
            ModelSpec::Mlp { widths, .. } => {
                if widths.len() < 2 {
                    return Err(Error::Config("mlp needs at least input and output widths".into()));
                }
                if widths.iter().any(|&w| w == 0) {
                    return Err(Error::Config("mlp widths must all be >= 1".into()));
                }
                Ok(())
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ModelSpec::Quadratic { offset, .. } => offset.len(),
            _ => {
                let widths = self.dense_widths();
                widths
                    .windows(2)
                    .map(|w| w[0] * w[1] + w[1])
                    .sum()
            }
        }
    }

    /// Layer widths of the dense kinds ([n_features, n_classes] for
    /// linear-softmax). Empty for quadratics.
    fn dense_widths(&self) -> Vec<usize> {
        match self {
            ModelSpec::Quadratic { .. } => Vec::new(),
            ModelSpec::LinearSoftmax { n_features, n_classes } => vec![*n_features, *n_classes],
            ModelSpec::Mlp { widths, .. } => widths.clone(),
        }
    }

    fn activation(&self) -> Activation {
        match self {
            ModelSpec::Mlp { activation, .. } => *activation,
            _ => Activation::Relu, // dense nets without hidden layers never apply it
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            ModelSpec::Quadratic { .. } => None,
            ModelSpec::LinearSoftmax { n_classes, .. } => Some(*n_classes),
            ModelSpec::Mlp { widths, .. } => Some(*widths.last().unwrap()),
        }
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.dim() != self.param_count() {
            return Err(Error::Contract(format!(
                "params dimension {} != model parameter count {}",
                params.dim(),
                self.param_count()
            )));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if let (widths, Some(classes)) = (self.dense_widths(), self.n_classes()) {
            if batch.n_features() != widths[0] {
                return Err(Error::Contract(format!(
                    "batch has {} features, model expects {}",
                    batch.n_features(),
                    widths[0]
                )));
            }
            if let Some(&bad) = batch.labels().iter().find(|&&y| y >= classes) {
                return Err(Error::Contract(format!(
                    "label {bad} out of range for {classes} classes"
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic parameter initialization.
///
/// Dense layers draw weights from uniform(-s, s) with
/// `s = sqrt(6 / (fan_in + fan_out))` and zero their biases; quadratics
/// return the spec's `start` (or the origin).
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    match spec {
        ModelSpec::Quadratic { offset, start, .. } => Ok(ParamVector::from_f64(
            start.clone().unwrap_or_else(|| vec![0.0; offset.len()]),
        )),
        _ => {
            let widths = spec.dense_widths();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut values = Vec::with_capacity(spec.param_count());
            for pair in widths.windows(2) {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for _ in 0..fan_in * fan_out {
                    values.push(rng.gen_range(-s..s));
                }
                values.extend(std::iter::repeat(0.0).take(fan_out));
            }
            Ok(ParamVector::from_f64(values))
        }
    }
}

/// Mean loss of the model on a batch.
pub fn loss(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    spec.loss(params, batch)
}

/// Mean loss and its gradient.
pub fn loss_and_grad(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<GradEval> {
    spec.loss_and_grad(params, batch)
}

impl Objective for ModelSpec {
    fn dim(&self) -> usize {
        self.param_count()
    }

    fn loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let value = match self {
            ModelSpec::Quadratic { matrix, offset, .. } => {
                quadratic_loss(matrix, offset, params.as_slice())
            }
            _ => dense_eval(
                &self.dense_widths(),
                self.activation(),
                params.as_slice(),
                batch,
                None,
            )?,
        };
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {value}")));
        }
        Ok(value)
    }

    fn loss_and_grad(&self, params: &ParamVector, batch: &Batch) -> Result<GradEval> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let mut grad = vec![0.0; self.dim()];
        let value = match self {
            ModelSpec::Quadratic { matrix, offset, .. } => {
                let w = params.as_slice();
                for (i, row) in matrix.iter().enumerate() {
                    let mut t = 0.0;
                    for (j, &a) in row.iter().enumerate() {
                        t += a * w[j];
                    }
                    grad[i] = t + offset[i];
                }
                quadratic_loss(matrix, offset, w)
            }
            _ => dense_eval(
                &self.dense_widths(),
                self.activation(),
                params.as_slice(),
                batch,
                Some(&mut grad),
            )?,
        };
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {value}")));
        }
        let grad = ParamVector::with_dtype(grad, params.dtype());
        if !grad.is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        Ok(GradEval { loss: value, grad })
    }

    fn loss_triple(
        &self,
        params: &ParamVector,
        batch: &Batch,
        v: &ParamVector,
        rho: f64,
    ) -> Result<LossTriple> {
        match self {
            ModelSpec::Quadratic { matrix, offset, .. } => {
                self.check_params(params)?;
                if v.dim() != params.dim() {
                    return Err(Error::Contract("probe direction dimension mismatch".into()));
                }
                Ok(quadratic_triple_dd(matrix, offset, params.as_slice(), v.as_slice(), rho))
            }
            _ => {
                // Default three-evaluation path.
                let plus = self.loss(&params.add_scaled(rho, v), batch)?;
                let minus = self.loss(&params.add_scaled(-rho, v), batch)?;
                let center = self.loss(params, batch)?;
                Ok(LossTriple {
                    center,
                    plus,
                    minus,
                    d1: plus - minus,
                    d2: (plus - center) + (minus - center),
                })
            }
        }
    }

    fn loss_triple_is_specialized(&self) -> bool {
        matches!(self, ModelSpec::Quadratic { .. })
    }

    fn layer_ranges(&self) -> Vec<Range<usize>> {
        match self {
            ModelSpec::Quadratic { .. } => vec![0..self.dim()],
            _ => {
                let widths = self.dense_widths();
                let mut ranges = Vec::with_capacity(widths.len() - 1);
                let mut cursor = 0;
                for pair in widths.windows(2) {
                    let len = pair[0] * pair[1] + pair[1];
                    ranges.push(cursor..cursor + len);
                    cursor += len;
                }
                ranges
            }
        }
    }
}

fn quadratic_loss(matrix: &[Vec<f64>], offset: &[f64], w: &[f64]) -> f64 {
    let mut quad = 0.0;
    for (i, row) in matrix.iter().enumerate() {
        let mut t = 0.0;
        for (j, &a) in row.iter().enumerate() {
            t += a * w[j];
        }
        quad += w[i] * t;
    }
    let lin: f64 = offset.iter().zip(w).map(|(b, x)| b * x).sum();
    0.5 * quad + lin
}

/// Probe triple for the quadratic model in double-double precision.
///
/// The perturbed points `w ± rho v` are formed exactly (TwoProd + TwoSum),
/// the quadratic form is accumulated in double-double, and only the final
/// d1/d2 are rounded; this keeps the second difference accurate even where
/// plain f64 would cancel to noise.
fn quadratic_triple_dd(
    matrix: &[Vec<f64>],
    offset: &[f64],
    w: &[f64],
    v: &[f64],
    rho: f64,
) -> LossTriple {
    let p = w.len();
    let mut up = vec![Dd::ZERO; p];
    let mut um = vec![Dd::ZERO; p];
    let mut u0 = vec![Dd::ZERO; p];
    for i in 0..p {
        let step = Dd::prod(rho, v[i]);
        up[i] = Dd::from_f64(w[i]).add(step);
        um[i] = Dd::from_f64(w[i]).sub(step);
        u0[i] = Dd::from_f64(w[i]);
    }
    let eval = |u: &[Dd]| -> Dd {
        let mut quad = Dd::ZERO;
        for (i, row) in matrix.iter().enumerate() {
            let mut t = Dd::ZERO;
            for (j, &a) in row.iter().enumerate() {
                t = t.add(u[j].mul_f64(a));
            }
            quad = quad.add(u[i].mul(t));
        }
        let mut total = quad.mul_f64(0.5);
        for (i, &b) in offset.iter().enumerate() {
            total = total.add(u[i].mul_f64(b));
        }
        total
    };
    let lp = eval(&up);
    let lm = eval(&um);
    let l0 = eval(&u0);
    LossTriple {
        center: l0.to_f64(),
        plus: lp.to_f64(),
        minus: lm.to_f64(),
        d1: lp.sub(lm).to_f64(),
        d2: lp.add(lm).sub(l0.mul_f64(2.0)).to_f64(),
    }
}

/// Dense forward (and optional backward) over a batch. Returns the mean loss;
/// when `grad_out` is given it receives the mean-loss gradient.
fn dense_eval(
    widths: &[usize],
    activation: Activation,
    w: &[f64],
    batch: &Batch,
    mut grad_out: Option<&mut [f64]>,
) -> Result<f64> {
    let n_layers = widths.len() - 1;
    let mut layer_offsets = Vec::with_capacity(n_layers);
    let mut cursor = 0;
    for pair in widths.windows(2) {
        layer_offsets.push(cursor);
        cursor += pair[0] * pair[1] + pair[1];
    }

    let mut acts: Vec<Vec<f64>> = widths.iter().map(|&n| vec![0.0; n]).collect();
    let mut zs: Vec<Vec<f64>> = widths[1..].iter().map(|&n| vec![0.0; n]).collect();
    let mut deltas: Vec<Vec<f64>> = widths[1..].iter().map(|&n| vec![0.0; n]).collect();

    let n = batch.len();
    let mut loss_sum = 0.0;
    for ex in 0..n {
        acts[0].copy_from_slice(batch.row(ex));
        for l in 0..n_layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let base = layer_offsets[l];
            let weights = &w[base..base + fan_in * fan_out];
            let biases = &w[base + fan_in * fan_out..base + fan_in * fan_out + fan_out];
            let (input, z) = (&acts[l], &mut zs[l]);
            for o in 0..fan_out {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let mut acc = biases[o];
                for (wi, xi) in row.iter().zip(input.iter()) {
                    acc += wi * xi;
                }
                z[o] = acc;
            }
            let hidden = l + 1 < n_layers;
            let out = std::mem::take(&mut acts[l + 1]);
            let mut out = out;
            for (a, &zv) in out.iter_mut().zip(zs[l].iter()) {
                *a = if hidden { activation.apply(zv) } else { zv };
            }
            acts[l + 1] = out;
        }

        // Cross-entropy with max-subtraction log-sum-exp.
        let logits = &acts[n_layers];
        let y = batch.labels()[ex];
        let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum_exp: f64 = logits.iter().map(|&z| (z - m).exp()).sum();
        let lse = m + sum_exp.ln();
        loss_sum += lse - logits[y];

        if let Some(grad) = grad_out.as_deref_mut() {
            // d(loss)/d(logit_j) = softmax_j - 1{j == y}
            {
                let dz = &mut deltas[n_layers - 1];
                for (j, d) in dz.iter_mut().enumerate() {
                    let p = (logits[j] - lse).exp();
                    *d = p - if j == y { 1.0 } else { 0.0 };
                }
            }
            for l in (0..n_layers).rev() {
                let (fan_in, fan_out) = (widths[l], widths[l + 1]);
                let base = layer_offsets[l];
                let (dz_prev, dz_rest) = deltas.split_at_mut(l);
                let dz = &dz_rest[0];
                let input = &acts[l];
                for o in 0..fan_out {
                    let d = dz[o];
                    let grow = &mut grad[base + o * fan_in..base + (o + 1) * fan_in];
                    for (g, xi) in grow.iter_mut().zip(input.iter()) {
                        *g += d * xi;
                    }
                    grad[base + fan_in * fan_out + o] += d;
                }
                if l > 0 {
                    let weights = &w[base..base + fan_in * fan_out];
                    let da = &mut dz_prev[l - 1];
                    for (i, d) in da.iter_mut().enumerate().take(fan_in) {
                        let mut acc = 0.0;
                        for o in 0..fan_out {
                            acc += weights[o * fan_in + i] * dz[o];
                        }
                        *d = acc * activation.derivative(zs[l - 1][i]);
                    }
                }
            }
        }
    }

    let inv_n = 1.0 / n as f64;
    if let Some(grad) = grad_out {
        for g in grad.iter_mut() {
            *g *= inv_n;
        }
    }
    Ok(loss_sum * inv_n)
}

/// Forward-only loss and classification accuracy on a batch.
///
/// Accuracy is the argmax hit rate for classifier kinds and 0.0 for
/// quadratics (which have no labels to be right about).
pub fn batch_metrics(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<Metrics> {
    spec.check_params(params)?;
    match spec {
        ModelSpec::Quadratic { .. } => Ok(Metrics {
            loss: spec.loss(params, batch)?,
            accuracy: 0.0,
        }),
        _ => {
            spec.check_batch(batch)?;
            let widths = spec.dense_widths();
            let activation = spec.activation();
            let loss = dense_eval(&widths, activation, params.as_slice(), batch, None)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss {loss}")));
            }
            let mut hits = 0usize;
            let mut scratch = DenseForward::new(&widths);
            for ex in 0..batch.len() {
                let logits = scratch.logits(&widths, activation, params.as_slice(), batch.row(ex));
                let pred = argmax(logits);
                if pred == batch.labels()[ex] {
                    hits += 1;
                }
            }
            Ok(Metrics {
                loss,
                accuracy: hits as f64 / batch.len() as f64,
            })
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

struct DenseForward {
    acts: Vec<Vec<f64>>,
}

impl DenseForward {
    fn new(widths: &[usize]) -> DenseForward {
        DenseForward {
            acts: widths.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn logits(
        &mut self,
        widths: &[usize],
        activation: Activation,
        w: &[f64],
        x: &[f64],
    ) -> &[f64] {
        let n_layers = widths.len() - 1;
        self.acts[0].copy_from_slice(x);
        let mut base = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let weights = &w[base..base + fan_in * fan_out];
            let biases = &w[base + fan_in * fan_out..base + fan_in * fan_out + fan_out];
            let (head, tail) = self.acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            let hidden = l + 1 < n_layers;
            for o in 0..fan_out {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let mut acc = biases[o];
                for (wi, xi) in row.iter().zip(input.iter()) {
                    acc += wi * xi;
                }
                out[o] = if hidden { activation.apply(acc) } else { acc };
            }
            base += fan_in * fan_out + fan_out;
        }
        &self.acts[n_layers]
    }
}

/// Wraps an objective and multiplies its loss (and gradient) by a positive
/// constant. Used by the scale-invariance checks of the normalized trace.
pub struct Scaled<M> {
    inner: M,
    factor: f64,
}

impl<M: Objective> Scaled<M> {
    pub fn new(inner: M, factor: f64) -> Result<Scaled<M>> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Contract("scale factor must be positive and finite".into()));
        }
        Ok(Scaled { inner, factor })
    }
}

impl<M: Objective> Objective for Scaled<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        Ok(self.factor * self.inner.loss(params, batch)?)
    }

    fn loss_and_grad(&self, params: &ParamVector, batch: &Batch) -> Result<GradEval> {
        let mut eval = self.inner.loss_and_grad(params, batch)?;
        eval.loss *= self.factor;
        eval.grad.scale(self.factor);
        Ok(eval)
    }

    fn loss_triple(
        &self,
        params: &ParamVector,
        batch: &Batch,
        v: &ParamVector,
        rho: f64,
    ) -> Result<LossTriple> {
        let t = self.inner.loss_triple(params, batch, v, rho)?;
        Ok(LossTriple {
            center: self.factor * t.center,
            plus: self.factor * t.plus,
            minus: self.factor * t.minus,
            d1: self.factor * t.d1,
            d2: self.factor * t.d2,
        })
    }

    fn loss_triple_is_specialized(&self) -> bool {
        self.inner.loss_triple_is_specialized()
    }

    fn layer_ranges(&self) -> Vec<Range<usize>> {
        self.inner.layer_ranges()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_two_moons, Batch};

    fn diag_quadratic(diag: &[f64], offset: Vec<f64>) -> ModelSpec {
        let p = diag.len();
        let mut matrix = vec![vec![0.0; p]; p];
        for (i, &d) in diag.iter().enumerate() {
            matrix[i][i] = d;
        }
        ModelSpec::Quadratic {
            matrix,
            offset,
            start: None,
        }
    }

    #[test]
    fn quadratic_init_is_start_or_zero() {
        let spec = diag_quadratic(&[1.0, 1.0], vec![0.0, 0.0]);
        let w = init_params(&spec, 0).unwrap();
        assert_eq!(w.as_slice(), &[0.0, 0.0]);
        let spec = ModelSpec::Quadratic {
            matrix: vec![vec![1.0]],
            offset: vec![0.0],
            start: Some(vec![3.5]),
        };
        assert_eq!(init_params(&spec, 0).unwrap().as_slice(), &[3.5]);
    }

    #[test]
    fn mlp_init_deterministic_and_counted() {
        let spec = ModelSpec::mlp(vec![2, 3, 2], Activation::Relu).unwrap();
        let a = init_params(&spec, 7).unwrap();
        let b = init_params(&spec, 7).unwrap();
        assert!(a.bits_eq(&b));
        assert_eq!(a.dim(), 2 * 3 + 3 + 3 * 2 + 2);
        assert_eq!(spec.param_count(), 17);
        let c = init_params(&spec, 8).unwrap();
        assert!(!c.bits_eq(&a));
    }

    #[test]
    fn mlp_init_bounds_and_zero_biases() {
        let spec = ModelSpec::mlp(vec![4, 5, 3], Activation::Tanh).unwrap();
        let w = init_params(&spec, 123).unwrap();
        let ranges = spec.layer_ranges();
        for (l, r) in ranges.iter().enumerate() {
            let (fan_in, fan_out) = match l {
                0 => (4, 5),
                _ => (5, 3),
            };
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let seg = &w.as_slice()[r.clone()];
            let (weights, biases) = seg.split_at(fan_in * fan_out);
            assert!(weights.iter().all(|&x| x.abs() < s));
            assert!(biases.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn quadratic_loss_and_grad_examples() {
        let spec = diag_quadratic(&[1.0, 4.0], vec![0.0, 0.0]);
        let w = ParamVector::from_f64(vec![1.0, 1.0]);
        let eval = loss_and_grad(&spec, &w, &Batch::placeholder()).unwrap();
        assert_eq!(eval.loss, 2.5);
        assert_eq!(eval.grad.as_slice(), &[1.0, 4.0]);

        let spec = diag_quadratic(&[1.0, 1.0], vec![2.0, -1.0]);
        let w = ParamVector::from_f64(vec![0.0, 0.0]);
        let eval = loss_and_grad(&spec, &w, &Batch::placeholder()).unwrap();
        assert_eq!(eval.grad.as_slice(), &[2.0, -1.0]);
    }

    #[test]
    fn linear_softmax_zero_params_is_log_n_classes() {
        let spec = ModelSpec::LinearSoftmax {
            n_features: 3,
            n_classes: 10,
        };
        let w = ParamVector::zeros(spec.param_count(), Dtype::F64);
        let batch = Batch::new(vec![0.3, -0.2, 1.0, 0.1, 0.0, -1.0], 3, vec![2, 7]).unwrap();
        let l = loss(&spec, &w, &batch).unwrap();
        assert!((l - 10.0f64.ln()).abs() < 1e-12);
    }

    /// Independent scalar forward pass; deliberately structured differently
    /// from `dense_eval` (per-neuron Vec allocation, no scratch reuse).
    fn naive_mlp_loss(spec: &ModelSpec, w: &[f64], batch: &Batch) -> f64 {
        let (widths, act) = match spec {
            ModelSpec::Mlp { widths, activation } => (widths.clone(), *activation),
            ModelSpec::LinearSoftmax { n_features, n_classes } => {
                (vec![*n_features, *n_classes], Activation::Relu)
            }
            _ => panic!(),
        };
        let mut total = 0.0;
        for ex in 0..batch.len() {
            let mut a: Vec<f64> = batch.row(ex).to_vec();
            let mut base = 0;
            for l in 0..widths.len() - 1 {
                let (fi, fo) = (widths[l], widths[l + 1]);
                let mut next = Vec::with_capacity(fo);
                for o in 0..fo {
                    let mut z = w[base + fi * fo + o];
                    for i in 0..fi {
                        z += w[base + o * fi + i] * a[i];
                    }
                    if l + 1 < widths.len() - 1 {
                        z = act.apply(z);
                    }
                    next.push(z);
                }
                a = next;
                base += fi * fo + fo;
            }
            let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + a.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
            total += lse - a[batch.labels()[ex]];
        }
        total / batch.len() as f64
    }

    #[test]
    fn mlp_loss_matches_independent_forward() {
        let spec = ModelSpec::mlp(vec![2, 5, 3, 2], Activation::Tanh).unwrap();
        let w = init_params(&spec, 3).unwrap();
        let ds = gen_two_moons(16, 0.2, 1).unwrap();
        let batch = ds.full_batch();
        let ours = loss(&spec, &w, &batch).unwrap();
        let naive = naive_mlp_loss(&spec, w.as_slice(), &batch);
        assert!(
            (ours - naive).abs() / naive.abs().max(1.0) < 1e-12,
            "{ours} vs {naive}"
        );
    }

    fn central_fd_gradient(spec: &ModelSpec, w: &ParamVector, batch: &Batch, h: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(w.dim());
        for i in 0..w.dim() {
            let mut wp = w.to_vec();
            let mut wm = w.to_vec();
            wp[i] += h;
            wm[i] -= h;
            let lp = loss(spec, &ParamVector::from_f64(wp), batch).unwrap();
            let lm = loss(spec, &ParamVector::from_f64(wm), batch).unwrap();
            out.push((lp - lm) / (2.0 * h));
        }
        out
    }

    #[test]
    fn mlp_gradient_matches_central_differences() {
        for (seed, act) in [(1u64, Activation::Relu), (2, Activation::Tanh)] {
            let spec = ModelSpec::mlp(vec![2, 4, 2], act).unwrap();
            let w = init_params(&spec, seed).unwrap();
            let ds = gen_two_moons(12, 0.3, seed).unwrap();
            let batch = ds.full_batch();
            let eval = loss_and_grad(&spec, &w, &batch).unwrap();
            let fd = central_fd_gradient(&spec, &w, &batch, 1e-5);
            for (g, f) in eval.grad.as_slice().iter().zip(&fd) {
                assert!(
                    (g - f).abs() / (1.0 + f.abs()) < 1e-4,
                    "grad {g} vs fd {f}"
                );
            }
        }
    }

    #[test]
    fn loss_is_bit_deterministic() {
        let spec = ModelSpec::mlp(vec![2, 8, 2], Activation::Relu).unwrap();
        let w = init_params(&spec, 11).unwrap();
        let batch = gen_two_moons(32, 0.25, 4).unwrap().full_batch();
        let a = loss(&spec, &w, &batch).unwrap();
        let b = loss(&spec, &w, &batch).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let spec = diag_quadratic(&[1.0, 1.0], vec![0.0, 0.0]);
        let w = ParamVector::from_f64(vec![1.0]);
        assert!(matches!(
            loss(&spec, &w, &Batch::placeholder()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn quadratic_triple_is_exact() {
        // A = diag(1,4), w = (1,1), v = (0,1): d1/2rho = v'(Aw) = 4, d2/rho^2 = v'Av = 4.
        let spec = diag_quadratic(&[1.0, 4.0], vec![0.0, 0.0]);
        let w = ParamVector::from_f64(vec![1.0, 1.0]);
        let v = ParamVector::from_f64(vec![0.0, 1.0]);
        for rho in [1e-1, 1e-3, 1e-4] {
            let t = spec
                .loss_triple(&w, &Batch::placeholder(), &v, rho)
                .unwrap();
            assert!((t.d1 / (2.0 * rho) - 4.0).abs() < 1e-10 * 4.0, "rho={rho}");
            assert!((t.d2 / (rho * rho) - 4.0).abs() < 1e-10 * 4.0, "rho={rho}");
        }
    }

    #[test]
    fn f32_dtype_quantizes_updates() {
        let mut w = ParamVector::with_dtype(vec![0.1, 0.2], Dtype::F32);
        let g = ParamVector::from_f64(vec![1e-9, 0.3]);
        w.axpy(1.0, &g);
        for v in w.as_slice() {
            assert_eq!(*v, *v as f32 as f64);
        }
    }

    #[test]
    fn scaled_wrapper_scales_loss_and_grad() {
        let spec = diag_quadratic(&[2.0, 2.0], vec![0.0, 0.0]);
        let scaled = Scaled::new(spec.clone(), 10.0).unwrap();
        let w = ParamVector::from_f64(vec![1.0, -1.0]);
        let base = spec.loss_and_grad(&w, &Batch::placeholder()).unwrap();
        let big = scaled.loss_and_grad(&w, &Batch::placeholder()).unwrap();
        assert!((big.loss - 10.0 * base.loss).abs() < 1e-12);
        for (a, b) in big.grad.as_slice().iter().zip(base.grad.as_slice()) {
            assert!((a - 10.0 * b).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        // Cross-entropy is non-negative and finite for any finite inputs.
        #[test]
        fn cross_entropy_nonnegative_and_finite(
            seed in 0u64..1000,
            scale in 0.1f64..50.0,
        ) {
            let spec = ModelSpec::mlp(vec![2, 4, 3], Activation::Tanh).unwrap();
            let mut w = init_params(&spec, seed).unwrap();
            w.scale(scale); // push logits around without losing finiteness
            let batch = Batch::new(
                vec![0.5, -0.25, 100.0, -100.0, 0.0, 0.0],
                2,
                vec![0, 1, 2],
            )
            .unwrap();
            let l = loss(&spec, &w, &batch).unwrap();
            proptest::prop_assert!(l.is_finite());
            proptest::prop_assert!(l >= 0.0);
        }
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = ModelSpec::mlp(vec![2, 64, 64, 2], Activation::Relu).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
