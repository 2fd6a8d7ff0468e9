use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{inner_update, inner_update_trace, InnerOptState};
use super::task::Task;
use crate::diff::{self, Objective, ParamVector, TangentMatrix};
use crate::error::{Error, Result};
use crate::rng::{tag, Stream};

/// The point a meta-gradient is taken at.
pub struct MetaContext<'a, T: Task> {
    pub task: &'a T,
    pub theta: &'a ParamVector,
    /// Unconstrained meta-parameters.
    pub eta: &'a [f64],
    pub meta_names: &'a [String],
    pub opt: &'a InnerOptState,
    pub env: &'a T::Env,
}

impl<T: Task> Clone for MetaContext<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Task> Copy for MetaContext<'_, T> {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaGradEstimate {
    /// `d𝓛′/dη` in the unconstrained space.
    pub gradient: Vec<f64>,
    pub n_used: usize,
    /// `i`-step gradients for `i = 1..=n`, when retained.
    pub per_step_grads: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Consumed {
    pub train_batches: usize,
    pub validation_batches: usize,
}

/// The committed first inner step together with the meta-gradient estimate
/// from the rest of the lookahead.
#[derive(Clone, Debug)]
pub struct LookaheadResult<E> {
    pub theta_first: ParamVector,
    pub opt_first: InnerOptState,
    pub env_first: E,
    pub estimate: MetaGradEstimate,
    pub consumed: Consumed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum TangentMode {
    Exact,
    Trace { mu: f64 },
}

struct Run<E> {
    first: (ParamVector, InnerOptState, E),
    grads: Vec<(usize, Vec<f64>)>,
    consumed: Consumed,
}

/// Training batch `j` of a lookahead is drawn from `stream → (TRAIN, j)` and
/// validation after `i` updates from `stream → (VALIDATION, i)`, so two
/// lookaheads on the same stream see identical data up to their common depth.
fn run_lookahead<T: Task>(
    ctx: MetaContext<'_, T>,
    depth: usize,
    mode: TangentMode,
    validate: impl Fn(usize) -> bool,
    stream: Stream,
) -> Result<Run<T::Env>> {
    if depth == 0 {
        return Err(Error::config("lookahead depth must be at least 1"));
    }
    let inner = ctx.task.inner();
    if ctx.eta.len() != inner.meta_dim() || ctx.meta_names.len() != ctx.eta.len() {
        return Err(Error::config("meta-parameter names and values do not match the inner loss"));
    }
    let mut theta = ctx.theta.clone();
    let mut opt = ctx.opt.clone();
    let mut env = ctx.env.clone();
    let mut j = TangentMatrix::zeros(theta.layout().clone(), ctx.meta_names.to_vec());
    let mut first = None;
    let mut grads = Vec::new();
    let mut consumed = Consumed::default();
    for step in 0..depth {
        let at_step = |e: Error| e.with_context(format!("lookahead step {}", step + 1));
        let batch = ctx.task.sample_train(&theta, &mut env, stream.path(&[tag::TRAIN, step as u64])).map_err(at_step)?;
        consumed.train_batches += 1;
        let (th, op, jn) = match mode {
            TangentMode::Exact => {
                let (th, op, jn) = inner_update(inner, &theta, ctx.eta, &batch, &opt, Some(&j)).map_err(at_step)?;
                (th, op, jn.expect("tangent requested"))
            }
            TangentMode::Trace { mu } => inner_update_trace(inner, &theta, ctx.eta, &batch, &opt, &j, mu).map_err(at_step)?,
        };
        theta = th;
        opt = op;
        j = jn;
        if step == 0 {
            first = Some((theta.clone(), opt.clone(), env.clone()));
        }
        let i = step + 1;
        if validate(i) {
            let vb = ctx
                .task
                .sample_validation(&theta, &env, stream.path(&[tag::VALIDATION, i as u64]))
                .map_err(at_step)?;
            consumed.validation_batches += 1;
            let g = diff::grad(ctx.task.outer(), &theta, &[], &vb).map_err(at_step)?;
            grads.push((i, j.pullback(&g)));
        }
    }
    Ok(Run { first: first.expect("depth ≥ 1"), grads, consumed })
}

fn check_finite(g: &[f64]) -> Result<()> {
    match g.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::numeric("meta-gradient").with_context(format!("component {i}"))),
    }
}

fn finish<E>(run: Run<E>, gradient: Vec<f64>, n: usize, per_step: Option<Vec<Vec<f64>>>) -> Result<LookaheadResult<E>> {
    check_finite(&gradient)?;
    let (theta_first, opt_first, env_first) = run.first;
    Ok(LookaheadResult {
        theta_first,
        opt_first,
        env_first,
        estimate: MetaGradEstimate { gradient, n_used: n, per_step_grads: per_step },
        consumed: run.consumed,
    })
}

/// Exact `n`-step meta-gradient: differentiate the outer loss after `n` inner
/// updates back through all of them.
pub fn n_step_meta_gradient<T: Task>(ctx: MetaContext<'_, T>, n: usize, stream: Stream) -> Result<LookaheadResult<T::Env>> {
    let mut run = run_lookahead(ctx, n, TangentMode::Exact, |i| i == n, stream)?;
    let (_, g) = run.grads.pop().expect("validated at n");
    finish(run, g, n, None)
}

/// Normalised weights `(1−κ)/(1−κⁿ)·κ^{i−1}`, `i = 1..=n`, with `0⁰ = 1`
/// and equal weights at `κ = 1`.
pub fn mixing_weights(n: usize, kappa: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::config("mixing needs n ≥ 1"));
    }
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::config(format!("kappa must lie in [0, 1], got {kappa}")));
    }
    if kappa == 1.0 {
        return Ok(vec![1.0 / n as f64; n]);
    }
    let z = (1.0 - kappa) / (1.0 - kappa.powi(n as i32));
    Ok((0..n).map(|i| z * kappa.powi(i as i32)).collect())
}

/// `κ` with `(1 − κ)⁻¹ = n`.
pub fn auto_kappa(n: usize) -> f64 {
    1.0 - 1.0 / n.max(1) as f64
}

/// `Σ_i w_i g_i`, summed in order.
pub fn weighted_sum(weights: &[f64], grads: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; grads.first().map_or(0, Vec::len)];
    for (w, g) in weights.iter().zip(grads) {
        for (o, x) in out.iter_mut().zip(g) {
            *o += w * x;
        }
    }
    out
}

/// κ-mixture of all `i`-step meta-gradients along one `n`-step lookahead,
/// each validated on its own fresh batch.
pub fn mixed_meta_gradient<T: Task>(
    ctx: MetaContext<'_, T>,
    n: usize,
    kappa: f64,
    keep_per_step: bool,
    stream: Stream,
) -> Result<LookaheadResult<T::Env>> {
    let w = mixing_weights(n, kappa)?;
    let run = run_lookahead(ctx, n, TangentMode::Exact, |_| true, stream)?;
    let per: Vec<Vec<f64>> = run.grads.iter().map(|(_, g)| g.clone()).collect();
    let g = weighted_sum(&w, &per);
    finish(run, g, n, keep_per_step.then_some(per))
}

/// Approximate `n`-step meta-gradient that replaces every `(I + H)` factor by
/// the scalar `μ`.
pub fn accumulative_trace_meta_gradient<T: Task>(
    ctx: MetaContext<'_, T>,
    n: usize,
    mu: f64,
    stream: Stream,
) -> Result<LookaheadResult<T::Env>> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::config(format!("mu must lie in [0, 1], got {mu}")));
    }
    let mut run = run_lookahead(ctx, n, TangentMode::Trace { mu }, |i| i == n, stream)?;
    let (_, g) = run.grads.pop().expect("validated at n");
    finish(run, g, n, None)
}

/// Exact `i`-step meta-gradients for every `i = 1..=depth` from a single
/// lookahead.
pub fn lookahead_panel<T: Task>(ctx: MetaContext<'_, T>, depth: usize, stream: Stream) -> Result<Vec<Vec<f64>>> {
    let run = run_lookahead(ctx, depth, TangentMode::Exact, |_| true, stream)?;
    run.grads
        .into_iter()
        .map(|(_, g)| {
            check_finite(&g)?;
            Ok(g)
        })
        .collect()
}

/// Stream of Monte Carlo shot `k`.
pub fn shot_stream(stream: Stream, k: u64) -> Stream {
    stream.path(&[tag::SHOT, k])
}

/// Independent `n`-step estimates for the given shots, in shot order.
pub fn shot_estimates<T: Task>(ctx: MetaContext<'_, T>, n: usize, shots: Range<u64>, stream: Stream) -> Result<Vec<Vec<f64>>> {
    shots
        .into_par_iter()
        .map(|k| {
            n_step_meta_gradient(ctx, n, shot_stream(stream, k))
                .map(|r| r.estimate.gradient)
                .map_err(|e| e.with_context(format!("shot {k}")))
        })
        .collect()
}

/// Per-component mean and Bessel-corrected variance (zero for a single
/// sample). Deviations are taken from the first sample, so identical samples
/// give exactly zero variance.
pub fn mean_and_variance(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let m = samples.len();
    let Some(first) = samples.first() else {
        return (Vec::new(), Vec::new());
    };
    let d = first.len();
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for s in samples {
        for k in 0..d {
            let dev = s[k] - first[k];
            sum[k] += dev;
            sq[k] += dev * dev;
        }
    }
    let mean = (0..d).map(|k| first[k] + sum[k] / m as f64).collect();
    let var = (0..d)
        .map(|k| if m > 1 { ((sq[k] - sum[k] * sum[k] / m as f64) / (m - 1) as f64).max(0.0) } else { 0.0 })
        .collect();
    (mean, var)
}

#[derive(Clone, Debug, PartialEq)]
pub struct McEstimate {
    pub estimate: MetaGradEstimate,
    pub variance: Vec<f64>,
    pub shots: usize,
}

/// Mean of `m` independent `n`-step meta-gradients from the same point.
pub fn mc_meta_gradient<T: Task>(ctx: MetaContext<'_, T>, n: usize, m: usize, stream: Stream) -> Result<McEstimate> {
    if m == 0 {
        return Err(Error::config("Monte Carlo estimation needs at least one shot"));
    }
    let samples = shot_estimates(ctx, n, 0..m as u64, stream)?;
    let (mean, variance) = mean_and_variance(&samples);
    check_finite(&mean)?;
    Ok(McEstimate { estimate: MetaGradEstimate { gradient: mean, n_used: n, per_step_grads: None }, variance, shots: m })
}

/// One inner update on the iteration's first training batch: the step every
/// estimator commits.
pub fn commit_step<T: Task>(ctx: MetaContext<'_, T>, stream: Stream) -> Result<(ParamVector, InnerOptState, T::Env)> {
    let mut env = ctx.env.clone();
    let batch = ctx.task.sample_train(ctx.theta, &mut env, stream.path(&[tag::TRAIN, 0]))?;
    let (theta, opt, _) = inner_update(ctx.task.inner(), ctx.theta, ctx.eta, &batch, ctx.opt, None)?;
    Ok((theta, opt, env))
}

/// How the meta-gradient is estimated at each training iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Estimator {
    /// No meta-learning.
    Fixed,
    NStep { n: usize },
    Mc { n: usize, shots: usize },
    Mix { n: usize, kappa: f64 },
    Trace { n: usize, mu: f64 },
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Fixed => "fixed",
            Estimator::NStep { .. } => "nstep",
            Estimator::Mc { .. } => "mc",
            Estimator::Mix { .. } => "mix",
            Estimator::Trace { .. } => "trace",
        }
    }

    pub fn n(&self) -> usize {
        match *self {
            Estimator::Fixed => 1,
            Estimator::NStep { n } | Estimator::Mc { n, .. } | Estimator::Mix { n, .. } | Estimator::Trace { n, .. } => n,
        }
    }

    /// A single estimate (no committed step) on `stream`.
    pub fn estimate<T: Task>(&self, ctx: MetaContext<'_, T>, stream: Stream) -> Result<Vec<f64>> {
        Ok(match *self {
            Estimator::Fixed => vec![0.0; ctx.eta.len()],
            Estimator::NStep { n } => n_step_meta_gradient(ctx, n, stream)?.estimate.gradient,
            Estimator::Mc { n, shots } => mc_meta_gradient(ctx, n, shots, stream)?.estimate.gradient,
            Estimator::Mix { n, kappa } => mixed_meta_gradient(ctx, n, kappa, false, stream)?.estimate.gradient,
            Estimator::Trace { n, mu } => accumulative_trace_meta_gradient(ctx, n, mu, stream)?.estimate.gradient,
        })
    }

    /// One training iteration: the committed inner step and, unless fixed,
    /// a meta-gradient.
    pub fn iterate<T: Task>(&self, ctx: MetaContext<'_, T>, stream: Stream) -> Result<IterationOutcome<T::Env>> {
        let lookahead = |r: LookaheadResult<T::Env>| IterationOutcome {
            theta: r.theta_first,
            opt: r.opt_first,
            env: r.env_first,
            meta_gradient: Some(r.estimate.gradient),
        };
        Ok(match *self {
            Estimator::Fixed => {
                let (theta, opt, env) = commit_step(ctx, stream)?;
                IterationOutcome { theta, opt, env, meta_gradient: None }
            }
            Estimator::Mc { n, shots } => {
                let (theta, opt, env) = commit_step(ctx, stream)?;
                let mc = mc_meta_gradient(ctx, n, shots, stream)?;
                IterationOutcome { theta, opt, env, meta_gradient: Some(mc.estimate.gradient) }
            }
            Estimator::NStep { n } => lookahead(n_step_meta_gradient(ctx, n, stream)?),
            Estimator::Mix { n, kappa } => lookahead(mixed_meta_gradient(ctx, n, kappa, false, stream)?),
            Estimator::Trace { n, mu } => lookahead(accumulative_trace_meta_gradient(ctx, n, mu, stream)?),
        })
    }
}

pub struct IterationOutcome<E> {
    pub theta: ParamVector,
    pub opt: InnerOptState,
    pub env: E,
    pub meta_gradient: Option<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metagrad::{MrpTask, QuadraticTask};
    use crate::nn::{init_params, NetworkSpec};
    use crate::objectives::toy::{LinearTilt, ShiftedQuadratic};
    use crate::objectives::MetaParams;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("eta_{i}")).collect()
    }

    /// `d/dη ½‖θ_n − c‖²` for `n` SGD steps on `½‖θ − ηb‖²` from `θ_0`.
    fn quadratic_oracle(theta0: &[f64], b: &[f64], c: &[f64], eta: f64, alpha: f64, n: usize) -> f64 {
        let decay = (1.0 - alpha).powi(n as i32);
        (0..b.len())
            .map(|i| {
                let theta_n = eta * b[i] + decay * (theta0[i] - eta * b[i]);
                (theta_n - c[i]) * b[i] * (1.0 - decay)
            })
            .sum()
    }

    #[test]
    fn quadratic_n_step_matches_closed_form() {
        let b = vec![1.0, -0.5, 2.0];
        let c = vec![0.3, 0.1, -0.2];
        let task = QuadraticTask::new(ShiftedQuadratic::new(b.clone()), c.clone(), 0.0);
        let theta = ParamVector::from_fn(task.inner().layout().clone(), |i| 0.5 - i as f64);
        let opt = InnerOptState::sgd(0.1, 3);
        let nm = names(1);
        let ctx = MetaContext { task: &task, theta: &theta, eta: &[0.7], meta_names: &nm, opt: &opt, env: &() };
        for n in [1, 2, 7, 50] {
            let r = n_step_meta_gradient(ctx, n, Stream::new(1)).unwrap();
            let want = quadratic_oracle(theta.values(), &b, &c, 0.7, 0.1, n);
            assert!((r.estimate.gradient[0] - want).abs() < 1e-10, "n={n}");
            assert_eq!(r.consumed, Consumed { train_batches: n, validation_batches: 1 });
        }
    }

    #[test]
    fn mixing_weight_endpoints() {
        assert_eq!(mixing_weights(4, 0.0).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(mixing_weights(4, 1.0).unwrap(), vec![0.25; 4]);
        let w = mixing_weights(3, 2.0 / 3.0).unwrap();
        for (a, b) in w.iter().zip([9.0 / 19.0, 6.0 / 19.0, 4.0 / 19.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        for n in 1..20 {
            for k in 0..=20 {
                let s: f64 = mixing_weights(n, k as f64 / 20.0).unwrap().iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert!(mixing_weights(3, 1.5).is_err());
        assert!(mixing_weights(0, 0.5).is_err());
    }

    #[test]
    fn auto_kappa_values() {
        assert_eq!(auto_kappa(1), 0.0);
        assert!((auto_kappa(5) - 0.8).abs() < 1e-15);
        assert!((auto_kappa(3) - 2.0 / 3.0).abs() < 1e-15);
    }

    fn mrp_point() -> (MrpTask, ParamVector, MetaParams, InnerOptState) {
        let task = MrpTask::new(8, 8).unwrap();
        let theta = init_params(NetworkSpec::MrpMlp, 4).unwrap();
        let eta = MetaParams::mrp(0.5).unwrap();
        let opt = InnerOptState::new(super::super::InnerOptKind::Adam, 1e-3, super::super::LrSchedule::Constant, None, theta.len()).unwrap();
        (task, theta, eta, opt)
    }

    #[test]
    fn kappa_zero_mix_is_one_step_bit_for_bit() {
        let (task, theta, eta, opt) = mrp_point();
        let ctx = MetaContext { task: &task, theta: &theta, eta: eta.raw(), meta_names: eta.names(), opt: &opt, env: &() };
        let s = Stream::new(11);
        let one = n_step_meta_gradient(ctx, 1, s).unwrap().estimate.gradient;
        let mix = mixed_meta_gradient(ctx, 4, 0.0, true, s).unwrap();
        assert_eq!(mix.estimate.gradient, one);
        let per = mix.estimate.per_step_grads.unwrap();
        assert_eq!(per.len(), 4);
        assert_eq!(per[0], one);
    }

    #[test]
    fn mix_equals_weighted_sum_of_retained_steps() {
        let (task, theta, eta, opt) = mrp_point();
        let ctx = MetaContext { task: &task, theta: &theta, eta: eta.raw(), meta_names: eta.names(), opt: &opt, env: &() };
        let r = mixed_meta_gradient(ctx, 3, auto_kappa(3), true, Stream::new(2)).unwrap();
        let w = mixing_weights(3, auto_kappa(3)).unwrap();
        let per = r.estimate.per_step_grads.unwrap();
        for k in 0..eta.len() {
            let s: f64 = (0..3).map(|i| w[i] * per[i][k]).sum();
            assert!((s - r.estimate.gradient[k]).abs() < 1e-12);
        }
        // the panel reproduces the n-step estimates at every depth
        let panel = lookahead_panel(ctx, 3, Stream::new(2)).unwrap();
        assert_eq!(panel, per);
        assert_eq!(n_step_meta_gradient(ctx, 2, Stream::new(2)).unwrap().estimate.gradient, per[1]);
    }

    #[test]
    fn committed_parameters_do_not_depend_on_estimator() {
        let (task, theta, eta, opt) = mrp_point();
        let ctx = MetaContext { task: &task, theta: &theta, eta: eta.raw(), meta_names: eta.names(), opt: &opt, env: &() };
        let s = Stream::new(5);
        let (base, base_opt, _) = commit_step(ctx, s).unwrap();
        for est in [
            Estimator::Fixed,
            Estimator::NStep { n: 1 },
            Estimator::NStep { n: 4 },
            Estimator::Mix { n: 3, kappa: 0.5 },
            Estimator::Trace { n: 3, mu: 0.9 },
            Estimator::Mc { n: 2, shots: 3 },
        ] {
            let out = est.iterate(ctx, s).unwrap();
            assert_eq!(out.theta, base, "{est:?}");
            assert_eq!(out.opt, base_opt);
            assert_eq!(out.meta_gradient.is_some(), est != Estimator::Fixed);
        }
    }

    #[test]
    fn mc_single_shot_and_chunked_means() {
        let (task, theta, eta, opt) = mrp_point();
        let ctx = MetaContext { task: &task, theta: &theta, eta: eta.raw(), meta_names: eta.names(), opt: &opt, env: &() };
        let s = Stream::new(8);
        let one = mc_meta_gradient(ctx, 2, 1, s).unwrap();
        assert_eq!(one.estimate.gradient, n_step_meta_gradient(ctx, 2, shot_stream(s, 0)).unwrap().estimate.gradient);
        assert!(one.variance.iter().all(|&v| v == 0.0));

        let (m, k) = (3u64, 4u64);
        let all = mc_meta_gradient(ctx, 2, (m * k) as usize, s).unwrap();
        let chunk_means: Vec<Vec<f64>> =
            (0..k).map(|c| mean_and_variance(&shot_estimates(ctx, 2, c * m..(c + 1) * m, s).unwrap()).0).collect();
        let (mean_of_means, _) = mean_and_variance(&chunk_means);
        for (a, b) in all.estimate.gradient.iter().zip(&mean_of_means) {
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
        assert!(all.variance.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn mc_variance_is_zero_without_noise() {
        let task = QuadraticTask::new(ShiftedQuadratic::new(vec![1.0, 2.0]), vec![0.0, 0.0], 0.0);
        let theta = ParamVector::zeros(task.inner().layout().clone());
        let opt = InnerOptState::sgd(0.2, 2);
        let nm = names(1);
        let ctx = MetaContext { task: &task, theta: &theta, eta: &[0.4], meta_names: &nm, opt: &opt, env: &() };
        let mc = mc_meta_gradient(ctx, 3, 16, Stream::new(0)).unwrap();
        assert_eq!(mc.variance, vec![0.0]);
    }

    #[test]
    fn trace_identities() {
        // n = 1: no Hessian enters, so trace equals exact.
        let (task, theta, eta, _) = mrp_point();
        let sgd = InnerOptState::sgd(0.05, theta.len());
        let ctx = MetaContext { task: &task, theta: &theta, eta: eta.raw(), meta_names: eta.names(), opt: &sgd, env: &() };
        let exact = n_step_meta_gradient(ctx, 1, Stream::new(3)).unwrap().estimate.gradient;
        let trace = accumulative_trace_meta_gradient(ctx, 1, 0.3, Stream::new(3)).unwrap().estimate.gradient;
        assert_eq!(exact, trace);

        // Zero Hessian: trace with μ = 1 is exact at any n.
        let b = vec![0.5, -1.0, 2.0];
        let lin = QuadraticTask::new(LinearTilt::new(b), vec![1.0, 1.0, 1.0], 0.3);
        let theta = ParamVector::zeros(lin.inner().layout().clone());
        let opt = InnerOptState::sgd(0.1, 3);
        let nm = names(1);
        let ctx = MetaContext { task: &lin, theta: &theta, eta: &[0.2], meta_names: &nm, opt: &opt, env: &() };
        for n in [2, 5, 9] {
            let e = n_step_meta_gradient(ctx, n, Stream::new(n as u64)).unwrap().estimate.gradient[0];
            let t = accumulative_trace_meta_gradient(ctx, n, 1.0, Stream::new(n as u64)).unwrap().estimate.gradient[0];
            assert!((e - t).abs() < 1e-12 * (1.0 + e.abs()), "n={n}: {e} vs {t}");
        }
    }

    #[test]
    fn trace_mu_zero_keeps_only_last_term() {
        // With μ = 0 the n-step trace equals the 1-step trace taken from θ^{(n−1)}.
        let b = vec![1.0, -2.0];
        let task = QuadraticTask::new(ShiftedQuadratic::new(b.clone()), vec![0.5, 0.5], 0.0);
        let theta = ParamVector::from_fn(task.inner().layout().clone(), |i| i as f64);
        let opt = InnerOptState::sgd(0.1, 2);
        let nm = names(1);
        let ctx = MetaContext { task: &task, theta: &theta, eta: &[0.3], meta_names: &nm, opt: &opt, env: &() };
        let g = accumulative_trace_meta_gradient(ctx, 4, 0.0, Stream::new(0)).unwrap().estimate.gradient[0];
        // J = α b; θ_4 from the closed form.
        let decay = 0.9f64.powi(4);
        let want: f64 = (0..2).map(|i| (0.3 * b[i] + decay * (i as f64 - 0.3 * b[i]) - 0.5) * 0.1 * b[i]).sum();
        assert!((g - want).abs() < 1e-12);
    }
}
