//! Meta-gradient variance and bias measurement, and a power-iteration probe
//! of how products of inner-update Jacobians grow.

mod spectral;

pub use spectral::{spectral_probe, SpectralProbeResult};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diff::norm;
use crate::error::{Error, Result};
use crate::metagrad::{
    auto_kappa, lookahead_panel, mean_and_variance, mixing_weights, shot_stream, weighted_sum, Estimator, MetaContext,
    Task,
};
use crate::rng::Stream;

/// Spread and bias of one estimator at one frozen `(θ, η)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceRecord {
    pub iteration: usize,
    pub estimator: String,
    pub n: usize,
    pub per_component_std: Vec<f64>,
    pub std_norm: f64,
    /// `std_norm` divided by the 1-step std norm at the same point.
    pub std_norm_rel_1step: f64,
    /// `‖mean estimate − mean oracle estimate‖`, when an oracle was run.
    pub bias_norm: Option<f64>,
    pub oracle_n: Option<usize>,
    pub shots: usize,
}

fn std_of(samples: &[Vec<f64>]) -> Vec<f64> {
    mean_and_variance(samples).1.into_iter().map(f64::sqrt).collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

fn check_shots(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::config(format!("variance needs at least 2 shots, got {k}")));
    }
    Ok(())
}

/// `k` independent estimates from the same point, and their spread relative
/// to `k` 1-step estimates on the same shot streams.
pub fn meta_gradient_batch_stats<T: Task>(
    ctx: MetaContext<'_, T>,
    estimator: Estimator,
    k: usize,
    stream: Stream,
    iteration: usize,
) -> Result<BiasVarianceRecord> {
    check_shots(k)?;
    let shots = |est: Estimator| -> Result<Vec<Vec<f64>>> {
        (0..k as u64)
            .into_par_iter()
            .map(|s| est.estimate(ctx, shot_stream(stream, s)).map_err(|e| e.with_context(format!("shot {s}"))))
            .collect()
    };
    let std = std_of(&shots(estimator)?);
    let std_norm = norm(&std);
    let one = match estimator {
        Estimator::NStep { n: 1 } => std_norm,
        _ => norm(&std_of(&shots(Estimator::NStep { n: 1 })?)),
    };
    Ok(BiasVarianceRecord {
        iteration,
        estimator: estimator.name().into(),
        n: estimator.n(),
        per_component_std: std,
        std_norm,
        std_norm_rel_1step: std_norm / one,
        bias_norm: None,
        oracle_n: None,
        shots: k,
    })
}

/// Bias of the `n`-step estimator against the `oracle_n`-step one. Both come
/// from the same `k` lookaheads, so equal depths give exactly zero.
pub fn bias_estimate<T: Task>(
    ctx: MetaContext<'_, T>,
    n: usize,
    oracle_n: usize,
    k: usize,
    stream: Stream,
    iteration: usize,
) -> Result<BiasVarianceRecord> {
    let records = sweep_records(ctx, &[n], oracle_n, false, k, stream, iteration)?;
    Ok(records.into_iter().next().expect("one record per n"))
}

/// One record per `n` (and per mixed-`n` when `with_mix`, using the automatic
/// κ), all derived from `k` lookaheads of depth `max(oracle_n, max n)`.
pub fn sweep_records<T: Task>(
    ctx: MetaContext<'_, T>,
    ns: &[usize],
    oracle_n: usize,
    with_mix: bool,
    k: usize,
    stream: Stream,
    iteration: usize,
) -> Result<Vec<BiasVarianceRecord>> {
    check_shots(k)?;
    if ns.is_empty() || ns.contains(&0) || oracle_n == 0 {
        return Err(Error::config("lookahead lengths must be at least 1"));
    }
    let depth = ns.iter().copied().max().unwrap_or(1).max(oracle_n);
    let panels: Vec<Vec<Vec<f64>>> = (0..k as u64)
        .into_par_iter()
        .map(|s| lookahead_panel(ctx, depth, shot_stream(stream, s)).map_err(|e| e.with_context(format!("shot {s}"))))
        .collect::<Result<_>>()?;
    let at = |i: usize| -> Vec<Vec<f64>> { panels.iter().map(|p| p[i - 1].clone()).collect() };
    let oracle_mean = mean_and_variance(&at(oracle_n)).0;
    let one_std = norm(&std_of(&at(1)));

    let record = |name: &str, n: usize, samples: Vec<Vec<f64>>| {
        let (mean, var) = mean_and_variance(&samples);
        let std: Vec<f64> = var.into_iter().map(f64::sqrt).collect();
        let std_norm = norm(&std);
        BiasVarianceRecord {
            iteration,
            estimator: name.into(),
            n,
            per_component_std: std,
            std_norm,
            std_norm_rel_1step: std_norm / one_std,
            bias_norm: Some(distance(&mean, &oracle_mean)),
            oracle_n: Some(oracle_n),
            shots: k,
        }
    };
    let mut out = Vec::new();
    for &n in ns {
        out.push(record("nstep", n, at(n)));
    }
    if with_mix {
        for &n in ns.iter().filter(|&&n| n > 1) {
            let w = mixing_weights(n, auto_kappa(n))?;
            let samples = panels.iter().map(|p| weighted_sum(&w, &p[..n])).collect();
            out.push(record("mix", n, samples));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{Objective, ParamVector};
    use crate::metagrad::{InnerOptState, QuadraticTask};
    use crate::objectives::toy::ShiftedQuadratic;

    fn toy(noise: f64) -> (QuadraticTask, ParamVector, InnerOptState, Vec<String>) {
        let task = QuadraticTask::new(ShiftedQuadratic::new(vec![1.0, -1.0, 0.5]), vec![0.2, 0.2, 0.2], noise);
        let theta = ParamVector::from_fn(task.inner().layout().clone(), |i| i as f64 - 1.0);
        (task, theta, InnerOptState::sgd(0.2, 3), vec!["eta".into()])
    }

    #[test]
    fn zero_noise_gives_zero_std() {
        let (task, theta, opt, names) = toy(0.0);
        let ctx = MetaContext { task: &task, theta: &theta, eta: &[0.3], meta_names: &names, opt: &opt, env: &() };
        let r = meta_gradient_batch_stats(ctx, Estimator::NStep { n: 3 }, 8, Stream::new(1), 0).unwrap();
        assert_eq!(r.per_component_std, vec![0.0]);
        assert_eq!(r.std_norm, 0.0);
    }

    #[test]
    fn stats_are_deterministic() {
        let (task, theta, opt, names) = toy(0.5);
        let ctx = MetaContext { task: &task, theta: &theta, eta: &[0.3], meta_names: &names, opt: &opt, env: &() };
        let a = meta_gradient_batch_stats(ctx, Estimator::Mix { n: 3, kappa: 0.5 }, 16, Stream::new(4), 7).unwrap();
        let b = meta_gradient_batch_stats(ctx, Estimator::Mix { n: 3, kappa: 0.5 }, 16, Stream::new(4), 7).unwrap();
        assert_eq!(a, b);
        assert!(a.std_norm > 0.0);
    }

    #[test]
    fn bias_zero_at_oracle_depth_and_symmetric() {
        let (task, theta, opt, names) = toy(0.5);
        let ctx = MetaContext { task: &task, theta: &theta, eta: &[0.3], meta_names: &names, opt: &opt, env: &() };
        let r = bias_estimate(ctx, 4, 4, 8, Stream::new(2), 0).unwrap();
        assert_eq!(r.bias_norm, Some(0.0));
        let ab = bias_estimate(ctx, 2, 5, 8, Stream::new(2), 0).unwrap().bias_norm.unwrap();
        let ba = bias_estimate(ctx, 5, 2, 8, Stream::new(2), 0).unwrap().bias_norm.unwrap();
        assert_eq!(ab, ba);
        assert!(ab > 0.0);
    }

    #[test]
    fn quadratic_bias_matches_closed_form() {
        // Noise enters θ_n linearly and J_n not at all, so the mean n-step
        // gradient is the noise-free one and the bias is closed form.
        let b = [1.0, -1.0, 0.5];
        let c = [0.2, 0.2, 0.2];
        let (task, theta, opt, names) = toy(0.3);
        let ctx = MetaContext { task: &task, theta: &theta, eta: &[0.3], meta_names: &names, opt: &opt, env: &() };
        let exact = |n: i32| -> f64 {
            let d = 0.8f64.powi(n);
            (0..3).map(|i| (0.3 * b[i] + d * (theta.values()[i] - 0.3 * b[i]) - c[i]) * b[i] * (1.0 - d)).sum()
        };
        let want = (exact(1) - exact(6)).abs();
        let r = bias_estimate(ctx, 1, 6, 4000, Stream::new(3), 0).unwrap();
        let got = r.bias_norm.unwrap();
        // Monte Carlo error of the difference of means, shared streams.
        let se = 4.0 * r.per_component_std[0] / (4000f64).sqrt() + 1e-3;
        assert!((got - want).abs() < se, "bias {got} vs {want} (tol {se})");
    }

    #[test]
    fn sweep_shapes_and_consistency() {
        let (task, theta, opt, names) = toy(0.4);
        let ctx = MetaContext { task: &task, theta: &theta, eta: &[0.3], meta_names: &names, opt: &opt, env: &() };
        let recs = sweep_records(ctx, &[1, 3], 3, true, 12, Stream::new(6), 5).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!((recs[0].estimator.as_str(), recs[0].n), ("nstep", 1));
        assert_eq!((recs[2].estimator.as_str(), recs[2].n), ("mix", 3));
        assert_eq!(recs[1].bias_norm, Some(0.0));
        assert!((recs[0].std_norm_rel_1step - 1.0).abs() < 1e-15);
        let direct = bias_estimate(ctx, 1, 3, 12, Stream::new(6), 5).unwrap();
        assert_eq!(direct.bias_norm, recs[0].bias_norm);
        let stats = meta_gradient_batch_stats(ctx, Estimator::NStep { n: 3 }, 12, Stream::new(6), 5).unwrap();
        assert!((stats.std_norm - recs[1].std_norm).abs() < 1e-12);
        assert!(sweep_records(ctx, &[1], 3, false, 1, Stream::new(6), 5).is_err());
    }
}
