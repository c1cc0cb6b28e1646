//! Optimizer steps: SGD with momentum, SAM, and curvature-regularized SAM
//! (CR-SAM), plus the cosine learning-rate schedule.
//!
//! The SAM step follows the one-step ascent approximation
//! `grad L(w + rho g/||g||)`; CR-SAM adds the gradient of the
//! finite-difference curvature regularizer
//! `R_c(w) = alpha log d2 + beta log d1` probed along the (frozen) unit
//! gradient direction, where `d1 = L(w+rho v) - L(w-rho v)` and
//! `d2 = L(w+rho v) + L(w-rho v) - 2 L(w)`.
//!
//! Log arguments are clamped at `log_floor`; a clamped term contributes zero
//! gradient and raises a flag in the step report. The probe direction is a
//! constant during differentiation (stop-gradient, as in SAM itself).
//!
//! Note on the update rule: the source pseudo-code folds the regularizer into
//! the update as `grad L(w) + R_c(w)`, omitting both the ascent point and the
//! gradient operator on `R_c`; this implementation reads it as
//! `grad L(w + rho v) + grad R_c(w)`, the gradient of the stated objective
//! `L_SAM + R_c`.
//!
//! Step functions are externally synchronized (one step owns one
//! `OptimizerState`). Internally the two perturbed evaluations of CR-SAM form
//! a fork-join pair; serial and concurrent execution produce bit-identical
//! outcomes because each evaluation is pure and the reduction order is fixed.

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{GradEval, Objective, ParamVector};

/// Gradient norms below this are treated as zero when normalizing.
pub const DEFAULT_GRAD_EPS: f64 = 1e-12;

pub const DEFAULT_LOG_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sgd,
    Sam,
    CrSam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    pub peak_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Perturbation radius shared by the SAM ascent and the FD probe offsets.
    pub rho: f64,
    /// Weight of the log second-difference (curvature) term.
    pub alpha: f64,
    /// Weight of the log first-difference (gradient-scale) term.
    pub beta: f64,
    pub total_epochs: usize,
    /// Clamp for the regularizer's log arguments.
    #[serde(default = "default_log_floor")]
    pub log_floor: f64,
}

fn default_log_floor() -> f64 {
    DEFAULT_LOG_FLOOR
}

impl OptimizerConfig {
    pub fn sgd(peak_lr: f64, momentum: f64, weight_decay: f64, total_epochs: usize) -> Self {
        OptimizerConfig {
            method: Method::Sgd,
            peak_lr,
            momentum,
            weight_decay,
            rho: 0.05,
            alpha: 0.0,
            beta: 0.0,
            total_epochs,
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0) {
            return Err(Error::Config("peak_lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.total_epochs == 0 {
            return Err(Error::Config("total_epochs must be >= 1".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be > 0".into()));
        }
        if self.method != Method::Sgd && !(self.rho > 0.0) {
            return Err(Error::Config("rho must be > 0 for sam/crsam".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("alpha and beta must be >= 0".into()));
        }
        if self.alpha != 0.0 && self.beta != 0.0 && self.alpha <= self.beta {
            return Err(Error::Config(
                "alpha must exceed beta when both are nonzero".into(),
            ));
        }
        Ok(())
    }

    /// Named hyperparameter profiles.
    ///
    /// The `cifar10-resnet18` / `cifar100-resnet18` entries reproduce the
    /// published full-scale settings; they are reference metadata and are not
    /// expected to be meaningful at desk scale. The `desk-*` entries are the
    /// defaults used by the two-moons experiments in this repository.
    pub fn preset(name: &str) -> Option<OptimizerConfig> {
        let base = OptimizerConfig {
            method: Method::Sgd,
            peak_lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            rho: 0.05,
            alpha: 0.0,
            beta: 0.0,
            total_epochs: 200,
            log_floor: DEFAULT_LOG_FLOOR,
        };
        match name {
            "desk-sgd" => Some(base),
            "desk-sam" => Some(OptimizerConfig {
                method: Method::Sam,
                ..base
            }),
            "desk-crsam" => Some(OptimizerConfig {
                method: Method::CrSam,
                alpha: 0.1,
                beta: 0.01,
                ..base
            }),
            "cifar10-resnet18" => Some(OptimizerConfig {
                method: Method::CrSam,
                weight_decay: 5e-3,
                rho: 0.10,
                alpha: 0.1,
                beta: 0.01,
                ..base
            }),
            "cifar100-resnet18" => Some(OptimizerConfig {
                method: Method::CrSam,
                weight_decay: 5e-3,
                rho: 0.15,
                alpha: 0.5,
                beta: 0.01,
                ..base
            }),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub momentum_buffer: ParamVector,
    pub step_count: u64,
    pub epoch: usize,
}

impl OptimizerState {
    pub fn new(params: &ParamVector) -> OptimizerState {
        OptimizerState {
            momentum_buffer: ParamVector::with_dtype(vec![0.0; params.dim()], params.dtype()),
            step_count: 0,
            epoch: 0,
        }
    }

    pub fn bits_eq(&self, other: &OptimizerState) -> bool {
        self.step_count == other.step_count
            && self.epoch == other.epoch
            && self.momentum_buffer.bits_eq(&other.momentum_buffer)
    }
}

/// Per-step observability record. Fields that a method does not compute are
/// `None`; every present value is finite.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepReport {
    pub base_loss: f64,
    /// Loss at the ascent point `w + rho v`.
    pub sam_loss: Option<f64>,
    /// Regularizer value up to its dropped additive constant.
    pub reg_value: Option<f64>,
    /// `L(w+rho v) - L(w-rho v)`.
    pub d1: Option<f64>,
    /// `L(w+rho v) + L(w-rho v) - 2 L(w)`.
    pub d2: Option<f64>,
    pub grad_norm: f64,
    pub d1_clamped: bool,
    pub d2_clamped: bool,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub new_params: ParamVector,
    pub new_state: OptimizerState,
    pub report: StepReport,
}

/// Whether CR-SAM's two perturbed evaluations run serially or as a rayon
/// fork-join pair. Both produce bit-identical outcomes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeExecution {
    Serial,
    Parallel,
}

/// Half-cosine decay from `peak_lr` at epoch 0 to zero at `total_epochs`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, peak_lr: f64) -> Result<f64> {
    if total_epochs == 0 || epoch > total_epochs {
        return Err(Error::Contract(format!(
            "epoch {epoch} outside schedule of {total_epochs} epochs"
        )));
    }
    let progress = epoch as f64 / total_epochs as f64;
    Ok(peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// One-step ascent offset `rho * g / ||g||`, or the zero vector when
/// `||g|| < eps`.
pub fn sam_perturbation(grad: &ParamVector, rho: f64, eps: f64) -> ParamVector {
    match unit_direction(grad, eps) {
        Some(unit) => unit.scaled(rho),
        None => ParamVector::with_dtype(vec![0.0; grad.dim()], grad.dtype()),
    }
}

fn unit_direction(grad: &ParamVector, eps: f64) -> Option<ParamVector> {
    let norm = grad.norm_l2();
    if norm < eps {
        None
    } else {
        Some(grad.scaled(1.0 / norm))
    }
}

/// Shared tail of every step: weight decay, momentum buffer, descent.
///
/// buffer <- momentum * buffer + (descent + weight_decay * params)
/// params <- params - lr * buffer
fn apply_update(
    model_dim: usize,
    params: &ParamVector,
    mut descent: ParamVector,
    config: &OptimizerConfig,
    state: &OptimizerState,
    report: StepReport,
) -> Result<StepOutcome> {
    debug_assert_eq!(descent.dim(), model_dim);
    let lr = cosine_lr(state.epoch, config.total_epochs, config.peak_lr)?;
    if config.weight_decay != 0.0 {
        descent.axpy(config.weight_decay, params);
    }
    let mut new_state = state.clone();
    new_state.momentum_buffer.scale(config.momentum);
    new_state.momentum_buffer.axpy(1.0, &descent);
    new_state.step_count = state.step_count + 1;
    let new_params = params.add_scaled(-lr, &new_state.momentum_buffer);
    if !new_params.is_finite() {
        return Err(Error::NonFiniteStep {
            what: "parameter update",
            step_count: new_state.step_count,
        });
    }
    Ok(StepOutcome {
        new_params,
        new_state,
        report,
    })
}

/// Plain SGD with momentum and coupled weight decay.
pub fn sgd_step<M: Objective + ?Sized>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    config: &OptimizerConfig,
    state: &OptimizerState,
) -> Result<StepOutcome> {
    config.validate()?;
    let eval = model.loss_and_grad(params, batch)?;
    let report = StepReport {
        base_loss: eval.loss,
        grad_norm: eval.grad.norm_l2(),
        ..StepReport::default()
    };
    apply_update(model.dim(), params, eval.grad, config, state, report)
}

/// SAM: descend along the gradient taken at the one-step ascent point.
pub fn sam_step<M: Objective + ?Sized>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    config: &OptimizerConfig,
    state: &OptimizerState,
) -> Result<StepOutcome> {
    config.validate()?;
    let center = model.loss_and_grad(params, batch)?;
    let mut report = StepReport {
        base_loss: center.loss,
        grad_norm: center.grad.norm_l2(),
        ..StepReport::default()
    };
    let descent = match unit_direction(&center.grad, DEFAULT_GRAD_EPS) {
        None => center.grad, // degenerate gradient: identical to sgd_step
        Some(unit) => {
            let ascent_point = params.add_scaled(config.rho, &unit);
            let perturbed = model.loss_and_grad(&ascent_point, batch)?;
            report.sam_loss = Some(perturbed.loss);
            perturbed.grad
        }
    };
    apply_update(model.dim(), params, descent, config, state, report)
}

/// Everything the curvature regularizer produces at one point.
#[derive(Clone, Debug)]
pub struct RegEval {
    pub reg_grad: ParamVector,
    /// `alpha ln(max(d2, floor)) + beta ln(max(d1, floor))`, up to the
    /// dropped additive constant.
    pub reg_value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d1_clamped: bool,
    pub d2_clamped: bool,
    pub loss_plus: f64,
    /// Gradient at `w + rho v`; doubles as the SAM descent gradient.
    pub grad_plus: ParamVector,
}

/// Gradient of `R_c` with the probe direction `v` held constant.
///
/// `v` must be a unit vector; the probe points are `w ± rho v`. Evaluates
/// the model gradient at `w`, `w + rho v`, and `w - rho v` (three
/// evaluations; the perturbed pair may run concurrently).
pub fn crsam_regularizer<M: Objective + ?Sized>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    v: &ParamVector,
    config: &OptimizerConfig,
) -> Result<RegEval> {
    let center = model.loss_and_grad(params, batch)?;
    regularizer_with_center(
        model,
        params,
        batch,
        v,
        config,
        &center,
        ProbeExecution::Serial,
    )
}

fn regularizer_with_center<M: Objective + ?Sized>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    v: &ParamVector,
    config: &OptimizerConfig,
    center: &GradEval,
    exec: ProbeExecution,
) -> Result<RegEval> {
    let rho = config.rho;
    let point_plus = params.add_scaled(rho, v);
    let point_minus = params.add_scaled(-rho, v);
    let (eval_plus, eval_minus) = match exec {
        ProbeExecution::Serial => (
            model.loss_and_grad(&point_plus, batch),
            model.loss_and_grad(&point_minus, batch),
        ),
        ProbeExecution::Parallel => rayon::join(
            || model.loss_and_grad(&point_plus, batch),
            || model.loss_and_grad(&point_minus, batch),
        ),
    };
    let (eval_plus, eval_minus) = (eval_plus?, eval_minus?);

    let (d1, d2) = if model.loss_triple_is_specialized() {
        let t = model.loss_triple(params, batch, v, rho)?;
        (t.d1, t.d2)
    } else {
        (
            eval_plus.loss - eval_minus.loss,
            (eval_plus.loss - center.loss) + (eval_minus.loss - center.loss),
        )
    };
    if !(d1.is_finite() && d2.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite probe differences d1={d1} d2={d2}"
        )));
    }

    let floor = config.log_floor;
    let d2_clamped = d2 < floor;
    let d1_clamped = d1 < floor;
    let mut reg_grad = ParamVector::with_dtype(vec![0.0; params.dim()], params.dtype());
    // d/dw [alpha log d2] = (alpha / d2) (g+ + g- - 2 g0), zero when clamped.
    if config.alpha != 0.0 && !d2_clamped {
        let c = config.alpha / d2;
        reg_grad.axpy(c, &eval_plus.grad);
        reg_grad.axpy(c, &eval_minus.grad);
        reg_grad.axpy(-2.0 * c, &center.grad);
    }
    // d/dw [beta log d1] = (beta / d1) (g+ - g-), zero when clamped.
    if config.beta != 0.0 && !d1_clamped {
        let c = config.beta / d1;
        reg_grad.axpy(c, &eval_plus.grad);
        reg_grad.axpy(-c, &eval_minus.grad);
    }
    let reg_value = config.alpha * d2.max(floor).ln() + config.beta * d1.max(floor).ln();
    Ok(RegEval {
        reg_grad,
        reg_value,
        d1,
        d2,
        d1_clamped,
        d2_clamped,
        loss_plus: eval_plus.loss,
        grad_plus: eval_plus.grad,
    })
}

/// CR-SAM: SAM descent gradient plus the curvature regularizer gradient.
///
/// Costs exactly three gradient evaluations (`w`, `w + rho v`, `w - rho v`);
/// with `alpha = beta = 0` the outcome is bit-identical to [`sam_step`].
pub fn crsam_step<M: Objective + ?Sized>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    config: &OptimizerConfig,
    state: &OptimizerState,
) -> Result<StepOutcome> {
    crsam_step_with(model, params, batch, config, state, ProbeExecution::Parallel)
}

pub fn crsam_step_with<M: Objective + ?Sized>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    config: &OptimizerConfig,
    state: &OptimizerState,
    exec: ProbeExecution,
) -> Result<StepOutcome> {
    config.validate()?;
    let center = model.loss_and_grad(params, batch)?;
    let mut report = StepReport {
        base_loss: center.loss,
        grad_norm: center.grad.norm_l2(),
        ..StepReport::default()
    };
    let descent = match unit_direction(&center.grad, DEFAULT_GRAD_EPS) {
        None => center.grad, // degenerate gradient: identical to sgd_step
        Some(unit) => {
            let reg =
                regularizer_with_center(model, params, batch, &unit, config, &center, exec)?;
            report.sam_loss = Some(reg.loss_plus);
            report.reg_value = Some(reg.reg_value);
            report.d1 = Some(reg.d1);
            report.d2 = Some(reg.d2);
            report.d1_clamped = reg.d1_clamped;
            report.d2_clamped = reg.d2_clamped;
            let mut descent = reg.grad_plus;
            // Skipped entirely for alpha = beta = 0 so the SAM reduction is
            // exact to the last bit.
            if config.alpha != 0.0 || config.beta != 0.0 {
                descent.axpy(1.0, &reg.reg_grad);
            }
            descent
        }
    };
    apply_update(model.dim(), params, descent, config, state, report)
}
