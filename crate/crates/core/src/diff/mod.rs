//! Gradients, Hessian-vector products, mixed θ–η second derivatives and the
//! forward tangent recursion `dθ/dη` through inner updates.
//!
//! Losses implement [`Objective`] once, generically over [`Real`]. Their
//! hand-written reverse sweep produces `∂L/∂θ` with the loss's stop-gradient
//! declarations baked in; evaluating that same sweep on [`Dual`] numbers seeds
//! a tangent through it, which yields exact second-order actions.

mod dual;
mod param;

use std::sync::Arc;

use rayon::prelude::*;

pub use dual::{Dual, Real};
pub use param::{dot, norm, Layout, ParamVector, Segment};

use crate::error::{Error, Result};

/// A scalar loss over a flat parameter vector, meta-parameters (unconstrained)
/// and a batch of data.
///
/// `value_and_grad` returns the loss and its θ-gradient. Targets that the loss
/// declares as stopped over θ are treated as constants by the reverse sweep,
/// but stay differentiable with respect to `eta` and are still traversed by
/// forward tangents, so a dual evaluation differentiates the gradient map
/// exactly as the inner update computes it.
pub trait Objective: Sync {
    type Batch: Sync;

    fn layout(&self) -> &Arc<Layout>;

    /// Dimension of the unconstrained meta-parameter vector this loss reads.
    fn meta_dim(&self) -> usize;

    fn value_and_grad<T: Real>(&self, theta: &[T], eta: &[T], batch: &Self::Batch) -> Result<(T, Vec<T>)>;
}

fn check_inputs<L: Objective>(loss: &L, theta: &ParamVector, eta: &[f64]) -> Result<()> {
    theta.check_layout(loss.layout())?;
    if eta.len() != loss.meta_dim() {
        return Err(Error::config(format!(
            "loss expects {} meta-parameters, got {}",
            loss.meta_dim(),
            eta.len()
        )));
    }
    Ok(())
}

fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::numeric(what).with_context(format!("entry {i}"))),
    }
}

pub fn value<L: Objective>(loss: &L, theta: &ParamVector, eta: &[f64], batch: &L::Batch) -> Result<f64> {
    check_inputs(loss, theta, eta)?;
    Ok(loss.value_and_grad::<f64>(theta.values(), eta, batch)?.0)
}

/// `∂L/∂θ`.
pub fn grad<L: Objective>(loss: &L, theta: &ParamVector, eta: &[f64], batch: &L::Batch) -> Result<ParamVector> {
    Ok(value_and_grad(loss, theta, eta, batch)?.1)
}

pub fn value_and_grad<L: Objective>(
    loss: &L,
    theta: &ParamVector,
    eta: &[f64],
    batch: &L::Batch,
) -> Result<(f64, ParamVector)> {
    check_inputs(loss, theta, eta)?;
    let (v, g) = loss.value_and_grad::<f64>(theta.values(), eta, batch)?;
    ensure_finite(&g, "gradient")?;
    Ok((v, theta.with_values(g)?))
}

/// Directional derivative of the gradient map along `(theta_dir, eta_dir)`:
/// `(∂²L/∂θ²)·theta_dir + (∂²L/∂θ∂η)·eta_dir`, from a single dual pass.
pub fn grad_jvp<L: Objective>(
    loss: &L,
    theta: &ParamVector,
    eta: &[f64],
    batch: &L::Batch,
    theta_dir: Option<&[f64]>,
    eta_dir: Option<&[f64]>,
) -> Result<ParamVector> {
    check_inputs(loss, theta, eta)?;
    let th: Vec<Dual> = match theta_dir {
        Some(d) => {
            if d.len() != theta.len() {
                return Err(Error::config("tangent direction does not match parameter layout"));
            }
            theta.values().iter().zip(d).map(|(&x, &t)| Dual::new(x, t)).collect()
        }
        None => theta.values().iter().map(|&x| Dual::cst(x)).collect(),
    };
    let et: Vec<Dual> = match eta_dir {
        Some(d) => eta.iter().zip(d).map(|(&x, &t)| Dual::new(x, t)).collect(),
        None => eta.iter().map(|&x| Dual::cst(x)).collect(),
    };
    let (_, g) = loss.value_and_grad::<Dual>(&th, &et, batch)?;
    let out: Vec<f64> = g.into_iter().map(|d| d.eps).collect();
    ensure_finite(&out, "second-order product")?;
    theta.with_values(out)
}

/// Raw Hessian action `(∂²L/∂θ²)·v`.
pub fn hvp<L: Objective>(
    loss: &L,
    theta: &ParamVector,
    eta: &[f64],
    batch: &L::Batch,
    v: &ParamVector,
) -> Result<ParamVector> {
    v.check_layout(theta.layout())?;
    grad_jvp(loss, theta, eta, batch, Some(v.values()), None)
}

/// Column `k` of `∂²L/∂θ∂η` in the unconstrained meta-parameter space.
pub fn mixed_column<L: Objective>(
    loss: &L,
    theta: &ParamVector,
    eta: &[f64],
    batch: &L::Batch,
    k: usize,
) -> Result<ParamVector> {
    if k >= eta.len() {
        return Err(Error::config(format!("meta index {k} out of range for {} meta-parameters", eta.len())));
    }
    let mut e = vec![0.0; eta.len()];
    e[k] = 1.0;
    grad_jvp(loss, theta, eta, batch, None, Some(&e))
}

/// The curvature of one inner loss at one point, as matrix-free actions.
pub struct CurvatureActions<'a, L: Objective> {
    pub loss: &'a L,
    pub theta: &'a ParamVector,
    pub eta: &'a [f64],
    pub batch: &'a L::Batch,
}

impl<'a, L: Objective> CurvatureActions<'a, L> {
    pub fn new(loss: &'a L, theta: &'a ParamVector, eta: &'a [f64], batch: &'a L::Batch) -> Self {
        CurvatureActions { loss, theta, eta, batch }
    }

    pub fn hvp(&self, v: &ParamVector) -> Result<ParamVector> {
        hvp(self.loss, self.theta, self.eta, self.batch, v)
    }

    pub fn mixed(&self, k: usize) -> Result<ParamVector> {
        mixed_column(self.loss, self.theta, self.eta, self.batch, k)
    }

    /// `hvp(v) + mixed(k)` in one pass.
    pub fn hvp_plus_mixed(&self, v: &ParamVector, k: usize) -> Result<ParamVector> {
        let mut e = vec![0.0; self.eta.len()];
        e[k] = 1.0;
        grad_jvp(self.loss, self.theta, self.eta, self.batch, Some(v.values()), Some(&e))
    }

    pub fn meta_dim(&self) -> usize {
        self.eta.len()
    }
}

/// `dθ/dη`, one column per unconstrained meta-parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentMatrix {
    columns: Vec<ParamVector>,
    meta_names: Vec<String>,
}

impl TangentMatrix {
    pub fn zeros(layout: Arc<Layout>, meta_names: Vec<String>) -> Self {
        let columns = meta_names.iter().map(|_| ParamVector::zeros(layout.clone())).collect();
        TangentMatrix { columns, meta_names }
    }

    pub fn from_columns(columns: Vec<ParamVector>, meta_names: Vec<String>) -> Result<Self> {
        if columns.len() != meta_names.len() {
            return Err(Error::config("tangent column count differs from meta-parameter count"));
        }
        Ok(TangentMatrix { columns, meta_names })
    }

    pub fn columns(&self) -> &[ParamVector] {
        &self.columns
    }

    pub fn column(&self, k: usize) -> &ParamVector {
        &self.columns[k]
    }

    pub fn meta_names(&self) -> &[String] {
        &self.meta_names
    }

    pub fn meta_dim(&self) -> usize {
        self.columns.len()
    }

    /// `g·J`, i.e. the chain rule from a θ-gradient to a meta-gradient.
    pub fn pullback(&self, g: &ParamVector) -> Vec<f64> {
        self.columns.iter().map(|c| c.dot(g)).collect()
    }
}

/// How an inner step scales the gradient it subtracts: plain `α`, or a
/// per-coordinate factor (adaptive optimisers with stopped statistics).
#[derive(Clone, Debug, PartialEq)]
pub enum StepScale {
    Uniform(f64),
    Diagonal(Vec<f64>),
}

impl StepScale {
    fn apply(&self, i: usize, x: f64) -> f64 {
        match self {
            StepScale::Uniform(a) => a * x,
            StepScale::Diagonal(d) => d[i] * x,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            StepScale::Uniform(a) => *a == 0.0,
            StepScale::Diagonal(d) => d.iter().all(|&x| x == 0.0),
        }
    }
}

/// One step of `J' = (I + H)·J + N` with `H = −α ∂²L/∂θ²`, `N = −α ∂²L/∂θ∂η`.
pub fn tangent_step<L: Objective>(
    j: &TangentMatrix,
    alpha: f64,
    actions: &CurvatureActions<'_, L>,
) -> Result<TangentMatrix> {
    tangent_step_scaled(j, &StepScale::Uniform(alpha), actions)
}

/// [`tangent_step`] with a general step scale `S`: `J' = J − S·(∂²L/∂θ²·J + ∂²L/∂θ∂η)`.
pub fn tangent_step_scaled<L: Objective>(
    j: &TangentMatrix,
    scale: &StepScale,
    actions: &CurvatureActions<'_, L>,
) -> Result<TangentMatrix> {
    if j.meta_dim() != actions.meta_dim() {
        return Err(Error::config(format!(
            "tangent matrix has {} columns but the loss has {} meta-parameters",
            j.meta_dim(),
            actions.meta_dim()
        )));
    }
    let columns = j
        .columns
        .par_iter()
        .enumerate()
        .map(|(k, col)| {
            let name = &j.meta_names[k];
            let prod = actions
                .hvp_plus_mixed(col, k)
                .map_err(|e| e.with_context(format!("tangent column `{name}`")))?;
            let values: Vec<f64> = col
                .values()
                .iter()
                .zip(prod.values())
                .enumerate()
                .map(|(i, (&c, &p))| c - scale.apply(i, p))
                .collect();
            ensure_finite(&values, "tangent").map_err(|e| e.with_context(format!("column `{name}`")))?;
            col.with_values(values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TangentMatrix { columns, meta_names: j.meta_names.clone() })
}
