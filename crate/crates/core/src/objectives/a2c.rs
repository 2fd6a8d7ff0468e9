use std::sync::Arc;

use super::meta_params::{Constraint, OuterParams};
use super::returns::lambda_return;
use crate::diff::{Layout, Objective, Real};
use crate::error::{Error, Result};
use crate::nn::{SnakeForward, SnakeNet, SNAKE_ACTIONS};

/// Rollout fragments from a batch of environments.
///
/// Observations are environment-major: for environment `e`, the `horizon`
/// step observations followed by the observation after the last step (used
/// only for bootstrapping).
#[derive(Clone, Debug, PartialEq)]
pub struct SnakeBatch {
    pub n_envs: usize,
    pub horizon: usize,
    pub obs: Vec<f64>,
    /// `n_envs × horizon`, environment-major.
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl SnakeBatch {
    pub fn steps(&self) -> usize {
        self.n_envs * self.horizon
    }

    fn validate(&self, obs_len: usize) -> Result<()> {
        let steps = self.steps();
        if steps == 0 {
            return Err(Error::config("empty snake batch"));
        }
        if self.actions.len() != steps || self.rewards.len() != steps || self.dones.len() != steps {
            return Err(Error::config("snake batch step arrays disagree in length"));
        }
        if self.obs.len() != self.n_envs * (self.horizon + 1) * obs_len {
            return Err(Error::config("snake batch observation buffer has the wrong size"));
        }
        if self.actions.iter().any(|&a| a >= SNAKE_ACTIONS) {
            return Err(Error::config("snake action index out of range"));
        }
        Ok(())
    }
}

/// Per-step log-softmax and probabilities (values only used for weights).
fn log_softmax<T: Real>(logits: &[T]) -> [T; SNAKE_ACTIONS] {
    let m = logits.iter().map(|l| l.value()).fold(f64::NEG_INFINITY, f64::max);
    let shifted: [T; SNAKE_ACTIONS] = std::array::from_fn(|k| logits[k] - T::cst(m));
    let mut s = T::zero();
    for z in shifted {
        s += z.exp();
    }
    let lse = s.ln();
    std::array::from_fn(|k| shifted[k] - lse)
}

struct Rollout<T> {
    fwd: SnakeForward<T>,
    targets: Vec<T>,
}

impl<T: Real> Rollout<T> {
    fn evaluate(net: &SnakeNet, theta: &[T], batch: &SnakeBatch, gamma: T, lambda: T) -> Result<Self> {
        batch.validate(net.obs_len())?;
        let fwd = net.forward(theta, &batch.obs)?;
        let h = batch.horizon;
        let mut targets = Vec::with_capacity(batch.steps());
        for e in 0..batch.n_envs {
            let steps = e * h..(e + 1) * h;
            let values = &fwd.values[e * (h + 1)..(e + 1) * (h + 1)];
            targets.extend(lambda_return(&batch.rewards[steps.clone()], values, &batch.dones[steps], gamma, lambda)?);
        }
        Ok(Rollout { fwd, targets })
    }

    /// Index into the forward outputs for step `t` of environment `e`.
    fn row(batch: &SnakeBatch, e: usize, t: usize) -> usize {
        e * (batch.horizon + 1) + t
    }
}

/// A2C inner loss over η = `[γ, λ, c_crit, c_entr]` (unconstrained):
///
/// `−A·log π(a) + c_crit·½(G − v)² − c_entr·H(π)`, averaged over steps, with
/// `G` the λ-return and `A = G − v`. The reverse sweep treats `A` and `G` as
/// constants (semi-gradient).
#[derive(Clone, Debug)]
pub struct A2cInnerLoss {
    net: SnakeNet,
}

impl A2cInnerLoss {
    pub fn new(net: SnakeNet) -> Self {
        A2cInnerLoss { net }
    }

    pub fn net(&self) -> &SnakeNet {
        &self.net
    }
}

impl Objective for A2cInnerLoss {
    type Batch = SnakeBatch;

    fn layout(&self) -> &Arc<Layout> {
        self.net.layout()
    }

    fn meta_dim(&self) -> usize {
        4
    }

    fn value_and_grad<T: Real>(&self, theta: &[T], eta: &[T], batch: &SnakeBatch) -> Result<(T, Vec<T>)> {
        let gamma = Constraint::Unit.squash(eta[0]);
        let lambda = Constraint::Unit.squash(eta[1]);
        let c_crit = Constraint::Positive.squash(eta[2]);
        let c_entr = Constraint::Positive.squash(eta[3]);
        let ro = Rollout::evaluate(&self.net, theta, batch, gamma, lambda)?;

        let n_rows = ro.fwd.values.len();
        let mut d_logits = vec![T::zero(); n_rows * SNAKE_ACTIONS];
        let mut d_values = vec![T::zero(); n_rows];
        let inv_n = 1.0 / batch.steps() as f64;
        let (mut policy, mut critic, mut entropy) = (T::zero(), T::zero(), T::zero());
        for e in 0..batch.n_envs {
            for t in 0..batch.horizon {
                let s = e * batch.horizon + t;
                let row = Rollout::<T>::row(batch, e, t);
                let logp = log_softmax(&ro.fwd.logits[row * SNAKE_ACTIONS..(row + 1) * SNAKE_ACTIONS]);
                let probs: [T; SNAKE_ACTIONS] = std::array::from_fn(|k| logp[k].exp());
                let v = ro.fwd.values[row];
                let adv = ro.targets[s] - v;
                let a = batch.actions[s];

                policy -= (adv * logp[a]).scale(inv_n);
                critic += (adv * adv).scale(0.5 * inv_n);
                let mut h = T::zero();
                for k in 0..SNAKE_ACTIONS {
                    h -= probs[k] * logp[k];
                }
                entropy += h.scale(inv_n);

                let dl = &mut d_logits[row * SNAKE_ACTIONS..(row + 1) * SNAKE_ACTIONS];
                for k in 0..SNAKE_ACTIONS {
                    let onehot = if k == a { T::one() } else { T::zero() };
                    // policy: −A(onehot − p); entropy: +c_entr·p(log p + H)
                    dl[k] = (-(adv * (onehot - probs[k])) + c_entr * probs[k] * (logp[k] + h)).scale(inv_n);
                }
                d_values[row] = -(c_crit * adv).scale(inv_n);
            }
        }
        for (name, term) in [("policy", policy), ("critic", critic), ("entropy", entropy)] {
            if !term.is_finite() {
                return Err(Error::numeric(name));
            }
        }
        let loss = policy + c_crit * critic - c_entr * entropy;
        let grad = self.net.backward(theta, &ro.fwd, &batch.obs, &d_logits, &d_values);
        Ok((loss, grad))
    }
}

/// Outer policy-gradient loss `−(G′ − v)·log π(a)` with fixed `γ′, λ′`; both
/// advantage factors are constants for the reverse sweep.
#[derive(Clone, Debug)]
pub struct A2cOuterLoss {
    net: SnakeNet,
    params: OuterParams,
}

impl A2cOuterLoss {
    pub fn new(net: SnakeNet, params: OuterParams) -> Self {
        A2cOuterLoss { net, params }
    }
}

impl Objective for A2cOuterLoss {
    type Batch = SnakeBatch;

    fn layout(&self) -> &Arc<Layout> {
        self.net.layout()
    }

    fn meta_dim(&self) -> usize {
        0
    }

    fn value_and_grad<T: Real>(&self, theta: &[T], _eta: &[T], batch: &SnakeBatch) -> Result<(T, Vec<T>)> {
        let ro = Rollout::evaluate(&self.net, theta, batch, T::cst(self.params.gamma), T::cst(self.params.lambda))?;
        let n_rows = ro.fwd.values.len();
        let mut d_logits = vec![T::zero(); n_rows * SNAKE_ACTIONS];
        let d_values = vec![T::zero(); n_rows];
        let inv_n = 1.0 / batch.steps() as f64;
        let mut loss = T::zero();
        for e in 0..batch.n_envs {
            for t in 0..batch.horizon {
                let s = e * batch.horizon + t;
                let row = Rollout::<T>::row(batch, e, t);
                let logp = log_softmax(&ro.fwd.logits[row * SNAKE_ACTIONS..(row + 1) * SNAKE_ACTIONS]);
                let adv = ro.targets[s] - ro.fwd.values[row];
                let a = batch.actions[s];
                loss -= (adv * logp[a]).scale(inv_n);
                let dl = &mut d_logits[row * SNAKE_ACTIONS..(row + 1) * SNAKE_ACTIONS];
                for k in 0..SNAKE_ACTIONS {
                    let onehot = if k == a { 1.0 } else { 0.0 };
                    dl[k] = -(adv * (T::cst(onehot) - logp[k].exp())).scale(inv_n);
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::numeric("policy"));
        }
        let grad = self.net.backward(theta, &ro.fwd, &batch.obs, &d_logits, &d_values);
        Ok((loss, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{self, ParamVector};
    use crate::nn::{init_params, softmax, NetworkSpec};
    use crate::rng::Stream;
    use rand::Rng as _;

    pub(crate) fn random_batch(side: usize, n_envs: usize, horizon: usize, seed: u64) -> SnakeBatch {
        let mut rng = Stream::new(seed).rng();
        let ol = side * side * 5;
        let obs = (0..n_envs * (horizon + 1) * ol)
            .map(|i| if i % 5 == 4 { ((i / 5) % (side * side)) as f64 / (side * side - 1) as f64 } else if rng.random::<f64>() < 0.08 { 1.0 } else { 0.0 })
            .collect();
        let steps = n_envs * horizon;
        SnakeBatch {
            n_envs,
            horizon,
            obs,
            actions: (0..steps).map(|_| rng.random_range(0..4)).collect(),
            rewards: (0..steps).map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 }).collect(),
            dones: (0..steps).map(|_| rng.random::<f64>() < 0.15).collect(),
        }
    }

    fn eta() -> Vec<f64> {
        let m = crate::objectives::MetaParams::snake(0.9, 0.8, 0.5, 0.05).unwrap();
        m.raw().to_vec()
    }

    /// Direct evaluation of the written A2C gradient, with ∂ log π/∂θ and
    /// ∂v/∂θ from central finite differences of the network outputs.
    fn written_gradient(net: &SnakeNet, theta: &ParamVector, batch: &SnakeBatch, eta: &[f64], params: &[usize]) -> Vec<f64> {
        let (gamma, lambda) = (1.0 / (1.0 + (-eta[0]).exp()), 1.0 / (1.0 + (-eta[1]).exp()));
        let (c_crit, c_entr) = (eta[2].exp(), eta[3].exp());
        let outputs = |p: &[f64]| net.forward::<f64>(p, &batch.obs).unwrap();
        let base = outputs(theta.values());
        let h = batch.horizon;
        let mut targets = Vec::new();
        for e in 0..batch.n_envs {
            let r = e * h..(e + 1) * h;
            targets.extend(
                lambda_return(&batch.rewards[r.clone()], &base.values[e * (h + 1)..(e + 1) * (h + 1)], &batch.dones[r], gamma, lambda).unwrap(),
            );
        }
        let n = batch.steps() as f64;
        let eps = 1e-6;
        params
            .iter()
            .map(|&k| {
                let mut p = theta.values().to_vec();
                p[k] += eps;
                let up = outputs(&p);
                p[k] -= 2.0 * eps;
                let dn = outputs(&p);
                let mut g = 0.0;
                for e in 0..batch.n_envs {
                    for t in 0..h {
                        let s = e * h + t;
                        let row = e * (h + 1) + t;
                        let lp = |o: &SnakeForward<f64>| {
                            let l = &o.logits[row * 4..row * 4 + 4];
                            let pr = softmax(l);
                            let ent: f64 = -pr.iter().map(|q| q * q.ln()).sum::<f64>();
                            (pr[batch.actions[s]].ln(), ent)
                        };
                        let (lu, hu) = lp(&up);
                        let (ld, hd) = lp(&dn);
                        let dlogp = (lu - ld) / (2.0 * eps);
                        let dent = (hu - hd) / (2.0 * eps);
                        let dv = (up.values[row] - dn.values[row]) / (2.0 * eps);
                        let adv = targets[s] - base.values[row];
                        g += -adv * dlogp - c_crit * adv * dv - c_entr * dent;
                    }
                }
                g / n
            })
            .collect()
    }

    #[test]
    fn inner_gradient_matches_written_form() {
        let side = 8;
        let net = SnakeNet::new(side).unwrap();
        let theta = init_params(NetworkSpec::SnakeActorCritic { side }, 3).unwrap();
        let batch = random_batch(side, 2, 5, 7);
        let eta = eta();
        let loss = A2cInnerLoss::new(net.clone());
        let g = diff::grad(&loss, &theta, &eta, &batch).unwrap();
        let mut rng = Stream::new(1).rng();
        let params: Vec<usize> = (0..60).map(|_| rng.random_range(0..theta.len())).collect();
        let oracle = written_gradient(&net, &theta, &batch, &eta, &params);
        for (&k, o) in params.iter().zip(oracle) {
            assert!((g.values()[k] - o).abs() <= 1e-6 * (1.0 + o.abs()), "param {k}: {} vs {o}", g.values()[k]);
        }
    }

    #[test]
    fn uniform_policy_entropy_is_ln4() {
        let side = 8;
        let net = SnakeNet::new(side).unwrap();
        let theta = ParamVector::zeros(net.layout().clone());
        let mut batch = random_batch(side, 1, 3, 2);
        batch.rewards = vec![0.0; 3];
        // Zero net: v = 0, G = 0, A = 0; loss = −c_entr·ln 4.
        let m = crate::objectives::MetaParams::snake(0.9, 0.9, 0.5, 1.0).unwrap();
        let l = diff::value(&A2cInnerLoss::new(net), &theta, m.raw(), &batch).unwrap();
        assert!((l + 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_advantage_gives_zero_outer_gradient() {
        let side = 8;
        let net = SnakeNet::new(side).unwrap();
        let theta = ParamVector::zeros(net.layout().clone());
        let mut batch = random_batch(side, 2, 4, 3);
        batch.rewards = vec![0.0; 8];
        let outer = A2cOuterLoss::new(net, OuterParams { gamma: 0.99, lambda: 0.99 });
        let (v, g) = diff::value_and_grad(&outer, &theta, &[], &batch).unwrap();
        assert!(v.is_finite());
        assert!(g.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn outer_gradient_matches_written_form() {
        let side = 8;
        let net = SnakeNet::new(side).unwrap();
        let theta = init_params(NetworkSpec::SnakeActorCritic { side }, 5).unwrap();
        let batch = random_batch(side, 2, 4, 9);
        let outer = A2cOuterLoss::new(net.clone(), OuterParams { gamma: 0.99, lambda: 0.99 });
        let g = diff::grad(&outer, &theta, &[], &batch).unwrap();
        // Same as the inner written gradient with γ = λ = 0.99 and zero critic/entropy weights.
        let eta = vec![(0.99f64 / 0.01).ln(), (0.99f64 / 0.01).ln(), -200.0, -200.0];
        let mut rng = Stream::new(2).rng();
        let params: Vec<usize> = (0..40).map(|_| rng.random_range(0..theta.len())).collect();
        let oracle = written_gradient(&net, &theta, &batch, &eta, &params);
        for (&k, o) in params.iter().zip(oracle) {
            assert!((g.values()[k] - o).abs() <= 1e-6 * (1.0 + o.abs()), "param {k}");
        }
    }
}
