//! The analytic-oracle verification suite.
//!
//! Each check pits an implementation path against an independent oracle:
//! closed-form quadratic identities, central finite differences, known
//! traces, dense random search. The CLI `selfcheck` subcommand and the
//! acceptance tests run exactly these functions, so CI and users exercise
//! the same suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::curvature::{
    directional_grad_fd, exact_worst_case_quadratic, hutchinson_trace, normalized_trace,
    quadratic_form_fd, quadratic_gain, ProbeKind,
};
use crate::data::{gen_two_moons, Batch, Dataset};
use crate::error::Result;
use crate::model::{
    init_params, Activation, GradEval, ModelSpec, Objective, ParamVector, Scaled,
};
use crate::optim::{
    crsam_regularizer, crsam_step, sam_step, sgd_step, Method, OptimizerConfig, OptimizerState,
    DEFAULT_LOG_FLOOR,
};
use crate::seeds::derive_seed;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub millis: u128,
}

/// Fault injection for exercising the failure path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tamper {
    None,
    /// Adds a constant to one gradient component, which must trip the
    /// gradient check.
    PerturbGradient,
}

pub fn all_pass(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}

/// Run the full suite. Deterministic given `seed`.
pub fn run_selfcheck(seed: u64, tamper: Tamper) -> Vec<CheckOutcome> {
    let timed = |name: &'static str, f: &dyn Fn() -> (bool, String)| -> CheckOutcome {
        let start = std::time::Instant::now();
        let (passed, detail) = f();
        CheckOutcome {
            name,
            passed,
            detail,
            millis: start.elapsed().as_millis(),
        }
    };
    vec![
        timed("theorem1-exactness", &|| check_theorem1(seed)),
        timed("gradient-check", &|| check_gradients(seed, tamper)),
        timed("hutchinson-calibration", &|| check_hutchinson(seed)),
        timed("reduction-identity", &|| check_reduction(seed)),
        timed("regularizer-gradient", &|| check_regularizer_gradient(seed)),
        timed("scale-invariance", &|| check_scale_invariance(seed)),
        timed("trust-region-dominance", &|| check_trust_region(seed)),
    ]
}

fn random_symmetric(rng: &mut ChaCha8Rng, p: usize, scale: f64) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..=i {
            let x = rng.gen_range(-scale..scale);
            m[i][j] = x;
            m[j][i] = x;
        }
    }
    m
}

/// FD probes reproduce v'(Aw+b) and v'Av on quadratics to 1e-8 relative over
/// 1000 random instances with rho spanning [1e-4, 1e-1].
pub fn check_theorem1(seed: u64) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let p = rng.gen_range(2..=32);
        let matrix = random_symmetric(&mut rng, p, 2.0);
        let offset: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = match ModelSpec::quadratic(matrix.clone(), offset.clone()) {
            Ok(s) => s,
            Err(e) => return (false, format!("trial {trial}: {e}")),
        };
        let w: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        let rho = 10f64.powf(rng.gen_range(-4.0..-1.0));

        let mut v_aw_b = 0.0;
        let mut v_av = 0.0;
        for i in 0..p {
            let mut aw = offset[i];
            let mut av = 0.0;
            for j in 0..p {
                aw += matrix[i][j] * w[j];
                av += matrix[i][j] * v[j];
            }
            v_aw_b += v[i] * aw;
            v_av += v[i] * av;
        }

        let wv = ParamVector::from_f64(w);
        let vv = ParamVector::from_f64(v);
        let batch = Batch::placeholder();
        let d = match directional_grad_fd(&spec, &wv, &batch, &vv, rho) {
            Ok(r) => r.value,
            Err(e) => return (false, format!("trial {trial}: {e}")),
        };
        let q = match quadratic_form_fd(&spec, &wv, &batch, &vv, rho) {
            Ok(r) => r.value,
            Err(e) => return (false, format!("trial {trial}: {e}")),
        };
        let rel_d = (d - v_aw_b).abs() / v_aw_b.abs().max(1e-300);
        let rel_q = (q - v_av).abs() / v_av.abs().max(1e-300);
        worst = worst.max(rel_d).max(rel_q);
        if rel_d > 1e-8 || rel_q > 1e-8 {
            return (
                false,
                format!("trial {trial}: rel errors {rel_d:.3e}/{rel_q:.3e} at rho={rho:.3e}"),
            );
        }
    }
    (true, format!("1000 instances, worst relative error {worst:.3e}"))
}

struct TamperedGrad<'a> {
    inner: &'a ModelSpec,
}

impl Objective for TamperedGrad<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn loss(&self, p: &ParamVector, b: &Batch) -> Result<f64> {
        self.inner.loss(p, b)
    }
    fn loss_and_grad(&self, p: &ParamVector, b: &Batch) -> Result<GradEval> {
        let mut eval = self.inner.loss_and_grad(p, b)?;
        let bumped = eval.grad.as_slice()[0] + 1e-3;
        eval.grad.values_mut()[0] = bumped;
        Ok(eval)
    }
}

/// Reverse-mode gradients match central finite differences (step 1e-5) to
/// 1e-4 normalized over 100 random MLP draws.
pub fn check_gradients(seed: u64, tamper: Tamper) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let hidden = rng.gen_range(2..6);
        let act = if rng.gen::<bool>() {
            Activation::Relu
        } else {
            Activation::Tanh
        };
        let spec = ModelSpec::mlp(vec![2, hidden, 2], act).unwrap();
        let w = init_params(&spec, rng.gen()).unwrap();
        let batch = gen_two_moons(8, 0.3, rng.gen()).unwrap().full_batch();

        let grad = match tamper {
            Tamper::None => spec.loss_and_grad(&w, &batch),
            Tamper::PerturbGradient => TamperedGrad { inner: &spec }.loss_and_grad(&w, &batch),
        };
        let grad = match grad {
            Ok(e) => e.grad,
            Err(e) => return (false, format!("trial {trial}: {e}")),
        };
        let h = 1e-5;
        for i in 0..w.dim() {
            let mut wp = w.to_vec();
            let mut wm = w.to_vec();
            wp[i] += h;
            wm[i] -= h;
            let lp = spec.loss(&ParamVector::from_f64(wp), &batch).unwrap();
            let lm = spec.loss(&ParamVector::from_f64(wm), &batch).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let err = (grad.as_slice()[i] - fd).abs() / (1.0 + fd.abs());
            worst = worst.max(err);
            if err > 1e-4 {
                return (
                    false,
                    format!("trial {trial}: component {i} off by {err:.3e}"),
                );
            }
        }
    }
    (true, format!("100 draws, worst normalized error {worst:.3e}"))
}

/// Hutchinson lands within 3 standard errors of the known trace in >= 99 of
/// 100 seeded trials; Rademacher probes on A = I (dim 16) are exact.
pub fn check_hutchinson(seed: u64) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let mut hits = 0usize;
    for _ in 0..100 {
        let p = 8;
        let matrix = random_symmetric(&mut rng, p, 1.5);
        let exact: f64 = (0..p).map(|i| matrix[i][i]).sum();
        let spec = ModelSpec::quadratic(matrix, vec![0.0; p]).unwrap();
        let w = ParamVector::from_f64((0..p).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let t = hutchinson_trace(&spec, &w, &Batch::placeholder(), 1000, rng.gen(), ProbeKind::Gaussian)
            .unwrap();
        if (t.estimate - exact).abs() <= 3.0 * t.stderr {
            hits += 1;
        }
    }
    if hits < 99 {
        return (false, format!("only {hits}/100 trials inside the 3-sigma band"));
    }
    let spec = ModelSpec::quadratic_diag(&[1.0; 16]);
    let w = ParamVector::zeros(16, crate::model::Dtype::F64);
    let t = hutchinson_trace(&spec, &w, &Batch::placeholder(), 32, seed, ProbeKind::Rademacher)
        .unwrap();
    if t.estimate != 16.0 || t.stderr != 0.0 {
        return (
            false,
            format!("rademacher on identity: {} +/- {}, expected exactly 16 +/- 0", t.estimate, t.stderr),
        );
    }
    (true, format!("{hits}/100 calibrated; identity trace exact"))
}

/// crsam with alpha = beta = 0 is bit-identical to sam over 100 random
/// steps; sam with rho = 1e-12 matches sgd to 1e-8 relative displacement.
pub fn check_reduction(seed: u64) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4));
    for trial in 0..100 {
        let spec = ModelSpec::mlp(vec![2, rng.gen_range(3..9), 2], Activation::Tanh).unwrap();
        let w = init_params(&spec, rng.gen()).unwrap();
        let batch = gen_two_moons(12, 0.25, rng.gen()).unwrap().full_batch();
        let cfg = OptimizerConfig {
            method: Method::CrSam,
            peak_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            rho: 0.05,
            alpha: 0.0,
            beta: 0.0,
            total_epochs: 1,
            log_floor: DEFAULT_LOG_FLOOR,
        };
        let state = OptimizerState::new(&w);
        let sam = sam_step(&spec, &w, &batch, &cfg, &state).unwrap();
        let cr = crsam_step(&spec, &w, &batch, &cfg, &state).unwrap();
        if !cr.new_params.bits_eq(&sam.new_params)
            || !cr.new_state.bits_eq(&sam.new_state)
        {
            return (false, format!("trial {trial}: crsam(0,0) != sam bitwise"));
        }

        let mut tiny = cfg;
        tiny.rho = 1e-12;
        let sam_tiny = sam_step(&spec, &w, &batch, &tiny, &state).unwrap();
        let sgd = sgd_step(&spec, &w, &batch, &tiny, &state).unwrap();
        let mut diff2 = 0.0;
        let mut base2 = 0.0;
        for ((a, b), w0) in sam_tiny
            .new_params
            .as_slice()
            .iter()
            .zip(sgd.new_params.as_slice())
            .zip(w.as_slice())
        {
            diff2 += (a - b) * (a - b);
            base2 += (b - w0) * (b - w0);
        }
        if diff2.sqrt() > 1e-8 * base2.sqrt().max(1e-300) {
            return (
                false,
                format!(
                    "trial {trial}: rho->0 displacement gap {:.3e} vs {:.3e}",
                    diff2.sqrt(),
                    base2.sqrt()
                ),
            );
        }
    }
    (true, "100 reduction steps bit-identical; rho->0 limit holds".into())
}

/// The regularizer gradient (probe direction frozen) matches a central FD of
/// the scalar regularizer to 1e-4 relative, away from clamp boundaries.
pub fn check_regularizer_gradient(seed: u64) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 5));
    let mut done = 0usize;
    let mut attempts = 0usize;
    let mut worst: f64 = 0.0;
    while done < 100 && attempts < 1000 {
        attempts += 1;
        let spec = ModelSpec::mlp(vec![2, rng.gen_range(3..7), 2], Activation::Tanh).unwrap();
        let w = init_params(&spec, rng.gen()).unwrap();
        let batch = gen_two_moons(10, 0.25, rng.gen()).unwrap().full_batch();
        let cfg = OptimizerConfig {
            method: Method::CrSam,
            peak_lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            rho: 0.1,
            alpha: 0.1,
            beta: 0.01,
            total_epochs: 1,
            log_floor: DEFAULT_LOG_FLOOR,
        };
        let center = spec.loss_and_grad(&w, &batch).unwrap();
        let gn = center.grad.norm_l2();
        if gn < 1e-8 {
            continue;
        }
        let v = center.grad.scaled(1.0 / gn);
        let reg = crsam_regularizer(&spec, &w, &batch, &v, &cfg).unwrap();
        // Stay clear of the clamp kink: FD probes must not cross it.
        if reg.d1 < 100.0 * cfg.log_floor || reg.d2 < 100.0 * cfg.log_floor {
            continue;
        }

        let reg_value_at = |wv: &ParamVector| -> f64 {
            let t = spec.loss_triple(wv, &batch, &v, cfg.rho).unwrap();
            cfg.alpha * t.d2.max(cfg.log_floor).ln() + cfg.beta * t.d1.max(cfg.log_floor).ln()
        };
        let h = 1e-6;
        for i in 0..w.dim() {
            let mut wp = w.to_vec();
            let mut wm = w.to_vec();
            wp[i] += h;
            wm[i] -= h;
            let fd = (reg_value_at(&ParamVector::from_f64(wp))
                - reg_value_at(&ParamVector::from_f64(wm)))
                / (2.0 * h);
            let got = reg.reg_grad.as_slice()[i];
            let err = (got - fd).abs() / (1.0 + fd.abs());
            worst = worst.max(err);
            if err > 1e-4 {
                return (
                    false,
                    format!("draw {done}: component {i} reg-grad off by {err:.3e}"),
                );
            }
        }
        done += 1;
    }
    if done < 100 {
        return (false, format!("only {done} usable draws in {attempts} attempts"));
    }
    (true, format!("100 draws, worst normalized error {worst:.3e}"))
}

/// Scaling the loss by c scales the trace estimate by c (to 1e-6) and leaves
/// the normalized trace unchanged (to 1e-10).
pub fn check_scale_invariance(seed: u64) -> (bool, String) {
    let spec = ModelSpec::mlp(vec![2, 8, 2], Activation::Tanh).unwrap();
    let w = init_params(&spec, derive_seed(seed, 6)).unwrap();
    let batch = gen_two_moons(32, 0.25, derive_seed(seed, 7)).unwrap().full_batch();
    let probes = 100;
    let base_grad = spec.loss_and_grad(&w, &batch).unwrap().grad.norm_l2();
    let base_trace = hutchinson_trace(&spec, &w, &batch, probes, seed, ProbeKind::Gaussian)
        .unwrap()
        .estimate;
    let base_c = normalized_trace(base_trace, base_grad).unwrap();
    for c in [0.1, 10.0] {
        let scaled = Scaled::new(spec.clone(), c).unwrap();
        let g = scaled.loss_and_grad(&w, &batch).unwrap().grad.norm_l2();
        let t = hutchinson_trace(&scaled, &w, &batch, probes, seed, ProbeKind::Gaussian)
            .unwrap()
            .estimate;
        let nc = normalized_trace(t, g).unwrap();
        let c_drift = (nc - base_c).abs() / base_c.abs().max(1e-300);
        let t_drift = (t - c * base_trace).abs() / (c * base_trace).abs().max(1e-300);
        if c_drift > 1e-10 {
            return (false, format!("normalized trace drifted {c_drift:.3e} at c={c}"));
        }
        if t_drift > 1e-6 {
            return (false, format!("trace scaled off by {t_drift:.3e} at c={c}"));
        }
    }
    (true, "normalized trace invariant under loss scaling".into())
}

/// The exact trust-region maximizer dominates both the one-step ascent point
/// and a million-point random sphere search, on 1000 random quadratics.
pub fn check_trust_region(seed: u64) -> (bool, String) {
    let failures: Vec<String> = (0..1000u64)
        .into_par_iter()
        .filter_map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7500 + trial));
            let p = rng.gen_range(2..=5usize);
            let matrix = random_symmetric(&mut rng, p, 2.0);
            let g: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let rho = rng.gen_range(0.05..1.0);
            let sol = match exact_worst_case_quadratic(&matrix, &g, rho) {
                Ok(s) => s,
                Err(e) => return Some(format!("trial {trial}: {e}")),
            };

            let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if gn > 0.0 {
                let one_step: Vec<f64> = g.iter().map(|x| rho * x / gn).collect();
                let one_gain = quadratic_gain(&matrix, &g, &one_step);
                if sol.max_increase < one_gain {
                    return Some(format!(
                        "trial {trial}: oracle {} below one-step {one_gain}",
                        sol.max_increase
                    ));
                }
            }

            let mut best = f64::NEG_INFINITY;
            let mut z = [0.0f64; 5];
            for _ in 0..1_000_000 {
                let mut n2 = 0.0;
                let mut s1 = 0.0;
                for (i, zi) in z.iter_mut().enumerate().take(p) {
                    *zi = StandardNormal.sample(&mut rng);
                    n2 += *zi * *zi;
                    s1 += g[i] * *zi;
                }
                let mut s2 = 0.0;
                for i in 0..p {
                    let row = &matrix[i];
                    let mut t = 0.0;
                    for j in 0..p {
                        t += row[j] * z[j];
                    }
                    s2 += z[i] * t;
                }
                let scale = rho / n2.sqrt();
                let gain = scale * s1 + 0.5 * scale * scale * s2;
                if gain > best {
                    best = gain;
                }
            }
            if sol.max_increase < best - 1e-6 {
                return Some(format!(
                    "trial {trial}: oracle {} below sphere search {best}",
                    sol.max_increase
                ));
            }
            None
        })
        .collect();
    if failures.is_empty() {
        (true, "1000 instances dominated (one-step and 1e6-sample search)".into())
    } else {
        (false, failures.into_iter().next().unwrap())
    }
}

/// Desk-scale dataset used by examples and smoke tests.
pub fn demo_dataset(seed: u64) -> Dataset {
    gen_two_moons(200, 0.25, seed).expect("valid generator arguments")
}
