use std::sync::Arc;

use super::meta_params::Constraint;
use super::returns::{gamma_powers, mrp_outer_target, mrp_target_with_powers};
use crate::diff::{Layout, Objective, Real};
use crate::env::{MrpTrajectory, MRP_STATES};
use crate::error::{Error, Result};
use crate::nn::MrpMlp;

/// A batch of independent MRP traversals.
#[derive(Clone, Debug, PartialEq)]
pub struct MrpBatch {
    pub trajectories: Vec<MrpTrajectory>,
}

impl MrpBatch {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// `½·mean_{b,i}(g_b(s_i) − v(s_i))²` given per-trajectory targets, with the
/// targets treated as constants by the reverse sweep.
fn squared_error<T: Real>(net: &MrpMlp, theta: &[T], targets: &[[T; MRP_STATES]]) -> Result<(T, Vec<T>)> {
    if targets.is_empty() {
        return Err(Error::config("MRP loss needs at least one trajectory"));
    }
    let inputs = MrpTrajectory::state_inputs();
    let fwd = net.forward(theta, &inputs);
    let scale = 1.0 / (targets.len() * MRP_STATES) as f64;
    let mut loss = T::zero();
    let mut d_out = vec![T::zero(); MRP_STATES];
    for g in targets {
        for i in 0..MRP_STATES {
            let resid = g[i] - fwd.outputs[i];
            loss += (resid * resid).scale(0.5 * scale);
            d_out[i] -= resid.scale(scale);
        }
    }
    if !loss.is_finite() {
        return Err(Error::numeric("mse"));
    }
    Ok((loss, net.backward(theta, &fwd, &d_out)))
}

/// Inner prediction loss with per-state meta-learned discounts.
#[derive(Clone, Debug, Default)]
pub struct PredictionInnerLoss {
    net: MrpMlp,
}

impl PredictionInnerLoss {
    pub fn new() -> Self {
        PredictionInnerLoss { net: MrpMlp::new() }
    }
}

impl Objective for PredictionInnerLoss {
    type Batch = MrpBatch;

    fn layout(&self) -> &Arc<Layout> {
        self.net.layout()
    }

    fn meta_dim(&self) -> usize {
        MRP_STATES
    }

    fn value_and_grad<T: Real>(&self, theta: &[T], eta: &[T], batch: &MrpBatch) -> Result<(T, Vec<T>)> {
        let gammas: Vec<T> = eta.iter().map(|&u| Constraint::Unit.squash(u)).collect();
        let powers = gamma_powers(&gammas);
        let targets: Vec<[T; MRP_STATES]> =
            batch.trajectories.iter().map(|t| mrp_target_with_powers(&t.rewards, &powers)).collect();
        squared_error(&self.net, theta, &targets)
    }
}

/// Outer prediction loss against the undiscounted return.
#[derive(Clone, Debug, Default)]
pub struct PredictionOuterLoss {
    net: MrpMlp,
}

impl PredictionOuterLoss {
    pub fn new() -> Self {
        PredictionOuterLoss { net: MrpMlp::new() }
    }
}

impl Objective for PredictionOuterLoss {
    type Batch = MrpBatch;

    fn layout(&self) -> &Arc<Layout> {
        self.net.layout()
    }

    fn meta_dim(&self) -> usize {
        0
    }

    fn value_and_grad<T: Real>(&self, theta: &[T], _eta: &[T], batch: &MrpBatch) -> Result<(T, Vec<T>)> {
        let targets: Vec<[T; MRP_STATES]> = batch
            .trajectories
            .iter()
            .map(|t| mrp_outer_target(&t.rewards).map(T::cst))
            .collect();
        squared_error(&self.net, theta, &targets)
    }
}
