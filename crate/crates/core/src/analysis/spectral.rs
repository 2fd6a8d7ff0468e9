use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diff::{self, Objective, ParamVector};
use crate::error::{Error, Result};
use crate::rng::{tag, Stream};

const RESTARTS: u64 = 3;
const TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralProbeResult {
    /// Rayleigh quotient of `I + H` along the dominant direction found.
    pub leading_eigen_estimate: f64,
    /// `‖(I + H)v‖` for that unit direction, an estimate of `ρ(I + H)`.
    pub spectral_radius: f64,
    /// `‖(I + H)^{i−1}v‖/‖v‖` for `i = 1..=i_max`, with `v` the dominant direction.
    pub growth_curve: Vec<f64>,
    /// The same with a random `v`.
    pub random_growth_curve: Vec<f64>,
    /// `ρ^{i−1}`.
    pub predicted_curve: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

fn random_unit(layout: &ParamVector, stream: Stream) -> ParamVector {
    let mut rng = stream.rng();
    let v = ParamVector::from_fn(layout.layout().clone(), |_| StandardNormal.sample(&mut rng));
    let n = v.norm();
    ParamVector::from_fn(v.layout().clone(), |i| v.values()[i] / n)
}

/// Power iteration on `v ↦ v − α·∇²𝓛·v` with three random restarts, keeping
/// the largest magnitude, followed by growth curves of its powers.
#[allow(clippy::too_many_arguments)]
pub fn spectral_probe<L: Objective>(
    loss: &L,
    theta: &ParamVector,
    eta: &[f64],
    batch: &L::Batch,
    alpha: f64,
    i_max: usize,
    iters: usize,
    stream: Stream,
) -> Result<SpectralProbeResult> {
    if iters == 0 || i_max == 0 {
        return Err(Error::config("spectral probe needs at least one iteration and one curve point"));
    }
    if theta.is_empty() {
        return Err(Error::config("spectral probe needs a non-empty parameter vector"));
    }
    let apply = |v: &ParamVector| -> Result<ParamVector> {
        if alpha == 0.0 {
            return Ok(v.clone());
        }
        let hv = diff::hvp(loss, theta, eta, batch, v)?;
        v.axpy(-alpha, &hv)
    };

    let mut best: Option<(f64, f64, ParamVector)> = None;
    let mut used = 0;
    let mut converged = true;
    for r in 0..RESTARTS {
        let mut v = random_unit(theta, stream.path(&[tag::PROBE, r]));
        let mut radius = f64::NAN;
        let mut rayleigh = f64::NAN;
        let mut done = false;
        for _ in 0..iters {
            used += 1;
            let w = apply(&v)?;
            let m = w.norm();
            rayleigh = v.dot(&w);
            let prev = radius;
            radius = m;
            if m == 0.0 {
                done = true;
                break;
            }
            v = ParamVector::from_fn(w.layout().clone(), |i| w.values()[i] / m);
            if (m - prev).abs() <= TOL * m {
                done = true;
                break;
            }
        }
        if !radius.is_finite() {
            return Err(Error::numeric("spectral probe"));
        }
        converged &= done;
        if best.as_ref().is_none_or(|(b, _, _)| radius > *b) {
            best = Some((radius, rayleigh, v));
        }
    }
    let (radius, rayleigh, dominant) = best.expect("at least one restart");

    let curve = |v0: ParamVector| -> Result<Vec<f64>> {
        let n0 = v0.norm();
        let mut v = v0;
        let mut out = Vec::with_capacity(i_max);
        for i in 0..i_max {
            if i > 0 {
                v = apply(&v)?;
            }
            out.push(v.norm() / n0);
        }
        Ok(out)
    };
    Ok(SpectralProbeResult {
        leading_eigen_estimate: rayleigh,
        spectral_radius: radius,
        growth_curve: curve(dominant)?,
        random_growth_curve: curve(random_unit(theta, stream.path(&[tag::PROBE, RESTARTS])))?,
        predicted_curve: (0..i_max).map(|i| radius.powi(i as i32)).collect(),
        iterations_used: used,
        converged,
    })
}
