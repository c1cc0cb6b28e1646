//! Exact worst-case increase of a quadratic over a Euclidean ball: the
//! trust-region subproblem `max g'd + 1/2 d'Ad  s.t. ||d|| <= rho`, solved
//! in the eigenbasis with a 1-D root find on the secular equation.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct TrustRegionSolution {
    pub delta_star: Vec<f64>,
    pub max_increase: f64,
    /// True when the maximizer sits on the ball boundary.
    pub on_boundary: bool,
}

/// `g'd + 1/2 d'Ad` for a candidate perturbation. Shared by the oracle and
/// its callers so candidate comparisons never differ by evaluation route.
pub fn quadratic_gain(matrix: &[Vec<f64>], g: &[f64], delta: &[f64]) -> f64 {
    let mut quad = 0.0;
    for (i, row) in matrix.iter().enumerate() {
        let mut t = 0.0;
        for (j, &a) in row.iter().enumerate() {
            t += a * delta[j];
        }
        quad += delta[i] * t;
    }
    let lin: f64 = g.iter().zip(delta).map(|(a, b)| a * b).sum();
    lin + 0.5 * quad
}

/// Maximize `g'd + 1/2 d'Ad` over `||d|| <= rho` exactly (A symmetric,
/// dimension <= 64).
///
/// The returned increase dominates the one-step ascent point by
/// construction: the one-step candidate is evaluated alongside the
/// stationary solution and the better of the two feasible points is kept,
/// which in exact arithmetic is always the stationary one.
pub fn exact_worst_case_quadratic(
    matrix: &[Vec<f64>],
    g: &[f64],
    rho: f64,
) -> Result<TrustRegionSolution> {
    let p = g.len();
    if p == 0 || p > 64 {
        return Err(Error::Contract(format!(
            "trust-region oracle supports dimensions 1..=64, got {p}"
        )));
    }
    if matrix.len() != p || matrix.iter().any(|row| row.len() != p) {
        return Err(Error::Contract("matrix/gradient dimension mismatch".into()));
    }
    if !(rho > 0.0) {
        return Err(Error::Contract("trust-region radius must be > 0".into()));
    }

    let m = DMatrix::from_fn(p, p, |i, j| matrix[i][j]);
    let eig = m.symmetric_eigen();
    let lambda: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    if lambda.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("eigendecomposition produced non-finite values".into()));
    }
    let q = eig.eigenvectors;
    // g in the eigenbasis.
    let mut ghat = vec![0.0; p];
    for (i, gh) in ghat.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..p {
            acc += q[(j, i)] * g[j];
        }
        *gh = acc;
    }
    let lambda_max = lambda.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gnorm = ghat.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut candidate: Option<(Vec<f64>, bool)> = None;

    // Interior stationary point: grad + A d = 0 with A negative definite.
    if lambda_max < 0.0 {
        let dhat: Vec<f64> = ghat.iter().zip(&lambda).map(|(g, l)| -g / l).collect();
        let norm = dhat.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= rho {
            candidate = Some((dhat, false));
        }
    }

    if candidate.is_none() {
        // Boundary: d_i(mu) = ghat_i / (mu - lambda_i), mu > lambda_max, with
        // ||d(mu)|| = rho. The norm decreases monotonically in mu.
        let norm_at = |mu: f64| -> f64 {
            ghat.iter()
                .zip(&lambda)
                .map(|(g, l)| (g / (mu - l)).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let scale = lambda_max.abs().max(1.0);
        let top_tol = 1e-12 * scale;
        let top_mass: f64 = ghat
            .iter()
            .zip(&lambda)
            .filter(|(_, &l)| lambda_max - l <= top_tol)
            .map(|(g, _)| g * g)
            .sum();

        let mut hard_case = false;
        if top_mass.sqrt() <= 1e-13 * gnorm.max(1.0) {
            // Gradient has (numerically) no component on the top eigenspace:
            // check whether the limit solution stays inside the ball.
            let limit_sq: f64 = ghat
                .iter()
                .zip(&lambda)
                .filter(|(_, &l)| lambda_max - l > top_tol)
                .map(|(g, &l)| (g / (lambda_max - l)).powi(2))
                .sum();
            if limit_sq <= rho * rho {
                // Hard case: fill the remaining norm along a top eigenvector.
                let mut dhat = vec![0.0; p];
                for i in 0..p {
                    if lambda_max - lambda[i] > top_tol {
                        dhat[i] = ghat[i] / (lambda_max - lambda[i]);
                    }
                }
                let tau = (rho * rho - limit_sq).max(0.0).sqrt();
                let top_index = (0..p)
                    .find(|&i| lambda_max - lambda[i] <= top_tol)
                    .expect("lambda_max is attained");
                dhat[top_index] += tau;
                candidate = Some((dhat, true));
                hard_case = true;
            }
        }

        if !hard_case {
            // Bracket the secular root, then bisect.
            let mut hi = lambda_max + gnorm / rho + 1.0;
            debug_assert!(norm_at(hi) <= rho);
            let mut lo = lambda_max + scale * 1e-8;
            let mut shrink = 0;
            while norm_at(lo) <= rho && shrink < 200 {
                lo = lambda_max + (lo - lambda_max) * 0.25;
                shrink += 1;
            }
            if norm_at(lo) <= rho {
                // Norm never reaches rho even arbitrarily close to the pole:
                // numerically a hard case with negligible headroom.
                let dhat: Vec<f64> = ghat
                    .iter()
                    .zip(&lambda)
                    .map(|(g, &l)| g / (lo - l))
                    .collect();
                candidate = Some((dhat, true));
            } else {
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if norm_at(mid) > rho {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let mu = 0.5 * (lo + hi);
                let dhat: Vec<f64> = ghat
                    .iter()
                    .zip(&lambda)
                    .map(|(g, &l)| g / (mu - l))
                    .collect();
                candidate = Some((dhat, true));
            }
        }
    }

    let (mut dhat, on_boundary) = candidate.expect("one branch always produces a candidate");
    if on_boundary {
        // Pin feasibility exactly.
        let norm = dhat.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for d in &mut dhat {
                *d *= rho / norm;
            }
        }
    }

    // Back to the original basis.
    let mut delta = vec![0.0; p];
    for (j, d) in delta.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..p {
            acc += q[(j, i)] * dhat[i];
        }
        *d = acc;
    }
    let mut best = delta;
    let mut best_gain = quadratic_gain(matrix, g, &best);
    let mut best_boundary = on_boundary;

    // Keep the one-step ascent point as a fallback candidate; in exact
    // arithmetic the stationary solution always wins.
    if gnorm > 0.0 {
        let graw_norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if graw_norm > 0.0 {
            let one_step: Vec<f64> = g.iter().map(|x| rho * x / graw_norm).collect();
            let gain = quadratic_gain(matrix, g, &one_step);
            if gain > best_gain {
                best = one_step;
                best_gain = gain;
                best_boundary = true;
            }
        }
    }

    if !best_gain.is_finite() {
        return Err(Error::Numeric("non-finite trust-region gain".into()));
    }
    Ok(TrustRegionSolution {
        delta_star: best,
        max_increase: best_gain,
        on_boundary: best_boundary,
    })
}
