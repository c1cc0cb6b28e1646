//! Sharpness approximation ratio: how well the one-step ascent perturbation
//! approximates a multi-step reference ascent, per example.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Objective, ParamVector};
use crate::optim::DEFAULT_GRAD_EPS;

/// Where the reference ascent starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AscentInit {
    /// Start at the one-step point. With monotone acceptance this pins every
    /// per-sample ratio at <= 1.
    OneStep,
    /// Start at the unperturbed parameters.
    Origin,
}

#[derive(Clone, Copy, Debug)]
pub struct ArOptions {
    pub init: AscentInit,
    /// Samples whose reference increase falls below this are excluded.
    pub denom_floor: f64,
}

impl Default for ArOptions {
    fn default() -> Self {
        ArOptions {
            init: AscentInit::OneStep,
            denom_floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ARReport {
    pub ar_mean: f64,
    pub ar_stderr: f64,
    /// Included samples; equals `per_sample_values.len()`.
    pub n_samples: usize,
    pub k_steps: usize,
    pub rho: f64,
    pub per_sample_values: Vec<f64>,
    /// Samples dropped for a degenerate gradient or reference increase.
    pub n_excluded: usize,
}

/// Approximation ratio of one-step sharpness over a k-step reference ascent.
///
/// For each sampled example with per-example loss `l`: the one-step
/// perturbation is `delta = rho g/||g||`; the reference `delta*` is a k-step
/// projected gradient ascent on the rho-ball (step size rho/k on the raw
/// per-example gradient, projecting back to the ball, accepting a step only
/// if `l` does not decrease), initialized at the one-step point. The
/// per-sample ratio is `(l(w+delta) - l(w)) / (l(w+delta*) - l(w))`.
pub fn approximation_ratio<M: Objective + ?Sized>(
    model: &M,
    params: &ParamVector,
    dataset: &Dataset,
    rho: f64,
    k_steps: usize,
    n_samples: usize,
    seed: u64,
    opts: ArOptions,
) -> Result<ARReport> {
    if k_steps < 1 {
        return Err(Error::Contract("approximation ratio needs k_steps >= 1".into()));
    }
    if n_samples < 1 {
        return Err(Error::Contract("approximation ratio needs n_samples >= 1".into()));
    }
    if !(rho > 0.0) {
        return Err(Error::Contract("approximation ratio needs rho > 0".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Contract("approximation ratio needs a nonempty dataset".into()));
    }

    // Seeded sample without replacement (truncated permutation).
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..indices.len()).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        indices.swap(i, j);
    }
    indices.truncate(n_samples.min(dataset.len()));

    let step_len = rho / k_steps as f64;
    let mut values = Vec::with_capacity(indices.len());
    let mut excluded = 0usize;
    for &idx in &indices {
        let batch = dataset.example(idx);
        let center = model.loss_and_grad(params, &batch)?;
        let gnorm = center.grad.norm_l2();
        if gnorm < DEFAULT_GRAD_EPS {
            excluded += 1;
            continue;
        }
        let unit = center.grad.scaled(1.0 / gnorm);
        let one_step = unit.scaled(rho);
        let loss_one_step = model.loss(&params.add_scaled(1.0, &one_step), &batch)?;
        let numerator = loss_one_step - center.loss;

        let (mut delta, mut current_loss) = match opts.init {
            AscentInit::OneStep => (one_step, loss_one_step),
            AscentInit::Origin => (
                ParamVector::with_dtype(vec![0.0; params.dim()], params.dtype()),
                center.loss,
            ),
        };
        for _ in 0..k_steps {
            let point = params.add_scaled(1.0, &delta);
            let eval = model.loss_and_grad(&point, &batch)?;
            if eval.grad.norm_l2() < DEFAULT_GRAD_EPS {
                break;
            }
            let mut candidate = delta.add_scaled(step_len, &eval.grad);
            let cn = candidate.norm_l2();
            if cn > rho {
                candidate.scale(rho / cn);
            }
            let candidate_loss = model.loss(&params.add_scaled(1.0, &candidate), &batch)?;
            if candidate_loss >= current_loss {
                delta = candidate;
                current_loss = candidate_loss;
            }
        }
        let denominator = current_loss - center.loss;
        if denominator < opts.denom_floor {
            excluded += 1;
            continue;
        }
        values.push(numerator / denominator);
    }

    if values.is_empty() {
        return Err(Error::Estimation(format!(
            "all {} sampled examples degenerate",
            indices.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if values.len() > 1 {
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(ARReport {
        ar_mean: mean,
        ar_stderr: stderr,
        n_samples: values.len(),
        k_steps,
        rho,
        per_sample_values: values,
        n_excluded: excluded,
    })
}
