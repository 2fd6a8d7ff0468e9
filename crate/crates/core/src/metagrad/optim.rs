use serde::{Deserialize, Serialize};

use crate::diff::{self, norm, CurvatureActions, Objective, ParamVector, StepScale, TangentMatrix};
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerOptKind {
    Sgd,
    Adam,
}

/// Learning rate over committed steps: constant, or linear decay reaching 0
/// at `total` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant,
    Linear { total: usize },
}

impl LrSchedule {
    pub fn rate(self, base: f64, step: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Linear { total: 0 } => 0.0,
            LrSchedule::Linear { total } => base * (1.0 - step as f64 / total as f64).max(0.0),
        }
    }
}

/// Inner optimiser: its hyper-parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerOptState {
    pub kind: InnerOptKind,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub clip: Option<f64>,
    step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl InnerOptState {
    pub fn new(kind: InnerOptKind, lr: f64, schedule: LrSchedule, clip: Option<f64>, n_params: usize) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("inner learning rate must be finite and non-negative, got {lr}")));
        }
        if let Some(c) = clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::config(format!("inner clip norm must be positive, got {c}")));
            }
        }
        let moments = if kind == InnerOptKind::Adam { vec![0.0; n_params] } else { Vec::new() };
        Ok(InnerOptState { kind, lr, schedule, clip, step: 0, m: moments.clone(), v: moments })
    }

    pub fn sgd(lr: f64, n_params: usize) -> Self {
        Self::new(InnerOptKind::Sgd, lr, LrSchedule::Constant, None, n_params).expect("valid sgd settings")
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.rate(self.lr, self.step)
    }

    /// Applies one update to `theta` given its gradient, returning the new
    /// parameters and the per-coordinate derivative of the step with respect
    /// to the gradient (statistics and clip factor held fixed).
    fn apply(&mut self, theta: &ParamVector, g: &ParamVector) -> Result<(ParamVector, StepScale)> {
        let lr = self.current_lr();
        let clip = match self.clip {
            Some(c) => {
                let n = g.norm();
                if n > c { c / n } else { 1.0 }
            }
            None => 1.0,
        };
        self.step += 1;
        match self.kind {
            InnerOptKind::Sgd => {
                let a = lr * clip;
                Ok((theta.axpy(-a, g)?, StepScale::Uniform(a)))
            }
            InnerOptKind::Adam => {
                if self.m.len() != theta.len() {
                    return Err(Error::config("optimiser moments do not match the parameter layout"));
                }
                let t = self.step as i32;
                let bc1 = 1.0 - BETA1.powi(t);
                let bc2 = 1.0 - BETA2.powi(t);
                let mut out = theta.values().to_vec();
                let mut scale = vec![0.0; out.len()];
                for i in 0..out.len() {
                    let gi = clip * g.values()[i];
                    self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * gi;
                    self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * gi * gi;
                    let denom = (self.v[i] / bc2).sqrt() + EPS;
                    out[i] -= lr * (self.m[i] / bc1) / denom;
                    scale[i] = lr * clip * (1.0 - BETA1) / bc1 / denom;
                }
                Ok((theta.with_values(out)?, StepScale::Diagonal(scale)))
            }
        }
    }
}

/// One inner step `θ′ = θ − α·step(∇_θ 𝓛)`. When a tangent is supplied it is
/// advanced through the same step.
pub fn inner_update<L: Objective>(
    loss: &L,
    theta: &ParamVector,
    eta: &[f64],
    batch: &L::Batch,
    opt: &InnerOptState,
    tangent: Option<&TangentMatrix>,
) -> Result<(ParamVector, InnerOptState, Option<TangentMatrix>)> {
    let g = diff::grad(loss, theta, eta, batch).map_err(|e| e.with_context(format!("inner step {}", opt.step)))?;
    let mut next = opt.clone();
    let (theta_next, scale) = next.apply(theta, &g)?;
    let tangent = match tangent {
        Some(j) if scale.is_zero() => Some(j.clone()),
        Some(j) => {
            let actions = CurvatureActions::new(loss, theta, eta, batch);
            Some(diff::tangent_step_scaled(j, &scale, &actions).map_err(|e| e.with_context(format!("inner step {}", opt.step)))?)
        }
        None => None,
    };
    Ok((theta_next, next, tangent))
}

/// Accumulated-trace variant of [`inner_update`]: `J′ = μJ − S·∂²𝓛/∂θ∂η`,
/// with no Hessian products.
pub(crate) fn inner_update_trace<L: Objective>(
    loss: &L,
    theta: &ParamVector,
    eta: &[f64],
    batch: &L::Batch,
    opt: &InnerOptState,
    tangent: &TangentMatrix,
    mu: f64,
) -> Result<(ParamVector, InnerOptState, TangentMatrix)> {
    let ctx = |e: Error| e.with_context(format!("inner step {}", opt.step));
    let g = diff::grad(loss, theta, eta, batch).map_err(ctx)?;
    let mut next = opt.clone();
    let (theta_next, scale) = next.apply(theta, &g)?;
    let columns = (0..tangent.meta_dim())
        .map(|k| {
            let n = diff::mixed_column(loss, theta, eta, batch, k).map_err(ctx)?;
            let vals = tangent
                .column(k)
                .values()
                .iter()
                .zip(n.values())
                .enumerate()
                .map(|(i, (&j, &nv))| {
                    let s = match &scale {
                        StepScale::Uniform(a) => *a,
                        StepScale::Diagonal(d) => d[i],
                    };
                    mu * j - s * nv
                })
                .collect();
            theta.with_values(vals)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((theta_next, next, TangentMatrix::from_columns(columns, tangent.meta_names().to_vec())?))
}

/// Adam over the unconstrained meta-parameters, with optional global-norm
/// clipping of the meta-gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaOptState {
    pub lr: f64,
    pub clip: Option<f64>,
    step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl MetaOptState {
    pub fn new(lr: f64, clip: Option<f64>, meta_dim: usize) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("meta learning rate must be finite and non-negative, got {lr}")));
        }
        if let Some(c) = clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::config(format!("meta clip norm must be positive, got {c}")));
            }
        }
        Ok(MetaOptState { lr, clip, step: 0, m: vec![0.0; meta_dim], v: vec![0.0; meta_dim] })
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

/// Global-norm clip.
pub fn clip_by_norm(g: &[f64], max_norm: f64) -> Vec<f64> {
    let n = norm(g);
    if n > max_norm {
        g.iter().map(|x| x * max_norm / n).collect()
    } else {
        g.to_vec()
    }
}

/// `η′ = η − β·Adam(clip(∇))`.
pub fn meta_update(eta: &[f64], grad: &[f64], opt: &MetaOptState) -> Result<(Vec<f64>, MetaOptState)> {
    if grad.len() != eta.len() || opt.m.len() != eta.len() {
        return Err(Error::config("meta-gradient, meta-parameters and optimiser state differ in length"));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::numeric("meta-gradient").with_context(format!("component {i}")));
    }
    let g = match opt.clip {
        Some(c) => clip_by_norm(grad, c),
        None => grad.to_vec(),
    };
    let mut next = opt.clone();
    next.step += 1;
    let t = next.step as i32;
    let (bc1, bc2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
    let mut out = eta.to_vec();
    for i in 0..out.len() {
        next.m[i] = BETA1 * next.m[i] + (1.0 - BETA1) * g[i];
        next.v[i] = BETA2 * next.v[i] + (1.0 - BETA2) * g[i] * g[i];
        out[i] -= next.lr * (next.m[i] / bc1) / ((next.v[i] / bc2).sqrt() + EPS);
    }
    Ok((out, next))
}
