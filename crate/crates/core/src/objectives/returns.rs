use crate::diff::Real;
use crate::env::MRP_STATES;
use crate::error::{Error, Result};

/// `g(s_i) = Σ_{j≥i} γ_j^{j−i+1} r_j` with one discount per state.
pub fn mrp_target<T: Real>(rewards: &[f64; MRP_STATES], gammas: &[T]) -> [T; MRP_STATES] {
    let powers = gamma_powers(gammas);
    mrp_target_with_powers(rewards, &powers)
}

/// `powers[j][k] = γ_j^k` for `k ≤ j + 1`.
pub(crate) fn gamma_powers<T: Real>(gammas: &[T]) -> Vec<Vec<T>> {
    gammas
        .iter()
        .enumerate()
        .map(|(j, &g)| {
            let mut p = Vec::with_capacity(j + 2);
            p.push(T::one());
            for k in 1..=j + 1 {
                let prev = p[k - 1];
                p.push(prev * g);
            }
            p
        })
        .collect()
}

pub(crate) fn mrp_target_with_powers<T: Real>(rewards: &[f64; MRP_STATES], powers: &[Vec<T>]) -> [T; MRP_STATES] {
    std::array::from_fn(|i| {
        let mut acc = T::zero();
        for j in i..MRP_STATES {
            acc += powers[j][j - i + 1].scale(rewards[j]);
        }
        acc
    })
}

/// Undiscounted return from each state.
pub fn mrp_outer_target(rewards: &[f64; MRP_STATES]) -> [f64; MRP_STATES] {
    let mut out = [0.0; MRP_STATES];
    let mut acc = 0.0;
    for i in (0..MRP_STATES).rev() {
        acc += rewards[i];
        out[i] = acc;
    }
    out
}

/// λ-returns `G_t = r_t + γ(1 − d_t)[(1 − λ)v_{t+1} + λG_{t+1}]`.
///
/// `values` has one more entry than `rewards`: the bootstrap value after the
/// last step. A done flag stops bootstrapping across the episode boundary.
pub fn lambda_return<T: Real>(rewards: &[f64], values: &[T], dones: &[bool], gamma: T, lambda: T) -> Result<Vec<T>> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(Error::config(format!(
            "lambda_return needs {n} dones and {} values, got {} and {}",
            n + 1,
            dones.len(),
            values.len()
        )));
    }
    let mut out = vec![T::zero(); n];
    let mut next = values[n];
    for t in (0..n).rev() {
        let g = if dones[t] {
            T::cst(rewards[t])
        } else {
            T::cst(rewards[t]) + gamma * ((T::one() - lambda) * values[t + 1] + lambda * next)
        };
        out[t] = g;
        next = g;
    }
    Ok(out)
}
