use std::fs;
use std::path::Path;
use std::time::Instant;

use super::config::{Command, ExperimentConfig};
use super::metrics::{export_plot_data, write_jsonl, MetricsRow, RowKind};
use crate::analysis::{sweep_records, BiasVarianceRecord};
use crate::diff::{self, ParamVector};
use crate::env::{SnakeConfig, SnakeVecEnv, MAX_EPISODE_STEPS};
use crate::error::{Error, Result};
use crate::metagrad::{
    meta_update, random_rollout, InnerOptState, MetaContext, MetaOptState, MrpTask, SnakeTask, Task,
};
use crate::nn::{init_params, NetworkSpec, SnakeNet};
use crate::objectives::{MetaParams, OuterParams};
use crate::rng::{tag, Stream};

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct RunLog {
    pub config: ExperimentConfig,
    pub rows: Vec<MetricsRow>,
    pub final_theta: ParamVector,
    pub final_meta: MetaParams,
}

impl RunLog {
    pub fn train_rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(|r| r.kind == RowKind::Train)
    }

    pub fn records(&self) -> impl Iterator<Item = &BiasVarianceRecord> {
        self.rows.iter().filter_map(|r| r.record.as_ref())
    }
}

/// Task-specific progress measurement between updates.
trait Observe: Task {
    /// Returns the evaluation loss (when `log` is set and the task has one)
    /// and the returns of episodes finished since the previous call.
    fn observe(&self, theta: &ParamVector, env: &mut Self::Env, stream: Stream, log: bool) -> Result<(Option<f64>, Vec<f64>)>;
}

impl Observe for MrpTask {
    fn observe(&self, theta: &ParamVector, env: &mut (), stream: Stream, log: bool) -> Result<(Option<f64>, Vec<f64>)> {
        if !log {
            return Ok((None, Vec::new()));
        }
        let batch = self.sample_validation(theta, env, stream)?;
        Ok((Some(diff::value(self.outer(), theta, &[], &batch)?), Vec::new()))
    }
}

impl Observe for SnakeTask {
    fn observe(&self, _theta: &ParamVector, env: &mut SnakeVecEnv, _stream: Stream, _log: bool) -> Result<(Option<f64>, Vec<f64>)> {
        Ok((None, env.take_completed_returns()))
    }
}

type Probe<'p, T> = dyn FnMut(usize, MetaContext<'_, T>, Stream) -> Result<Vec<BiasVarianceRecord>> + 'p;

fn train<T: Observe>(
    task: &T,
    cfg: &ExperimentConfig,
    mut theta: ParamVector,
    mut env: T::Env,
    mut meta: MetaParams,
    probe: &mut Probe<'_, T>,
) -> Result<RunLog> {
    let master = Stream::new(cfg.seed);
    let estimator = cfg.estimator();
    let mut opt = InnerOptState::new(cfg.inner_optimizer, cfg.alpha, cfg.lr_schedule(), cfg.inner_clip, theta.len())?;
    let mut meta_opt = MetaOptState::new(cfg.meta_lr, cfg.meta_clip, meta.len())?;
    let start = Instant::now();
    let clock = |on: bool| on.then(|| start.elapsed().as_secs_f64());
    let mut rows = Vec::new();
    let mut returns = Vec::new();
    for t in 0..=cfg.iterations {
        let s = master.path(&[tag::ITERATION, t as u64]);
        let at = |e: Error| e.with_context(format!("iteration {t}"));
        let ctx = MetaContext { task, theta: &theta, eta: meta.raw(), meta_names: meta.names(), opt: &opt, env: &env };
        for record in probe(t, ctx, s.child(tag::PROBE)).map_err(at)? {
            rows.push(MetricsRow {
                kind: RowKind::Probe,
                iteration: t,
                seed: cfg.seed,
                estimator: estimator.name().into(),
                loss: None,
                mean_return: None,
                episodes: None,
                meta: meta.names().iter().cloned().zip(meta.constrained()).collect(),
                wall_clock: clock(cfg.wall_clock),
                record: Some(record),
            });
        }
        if t == cfg.iterations {
            break;
        }
        let out = estimator.iterate(ctx, s).map_err(at)?;
        theta = out.theta;
        opt = out.opt;
        env = out.env;
        if let Some(g) = out.meta_gradient {
            let (raw, next) = meta_update(meta.raw(), &g, &meta_opt).map_err(at)?;
            meta = meta.with_raw(raw)?;
            meta_opt = next;
        }
        let done = t + 1;
        let log = done % cfg.log_every == 0 || done == cfg.iterations;
        let (loss, finished) = task.observe(&theta, &mut env, s.child(tag::EVAL), log).map_err(at)?;
        if let Some(l) = loss {
            if !l.is_finite() {
                return Err(at(Error::numeric("loss")));
            }
        }
        returns.extend(finished);
        if log {
            let episodes = std::mem::take(&mut returns);
            let is_snake = cfg.command == Command::Snake;
            rows.push(MetricsRow {
                kind: RowKind::Train,
                iteration: done,
                seed: cfg.seed,
                estimator: estimator.name().into(),
                loss,
                mean_return: (is_snake && !episodes.is_empty()).then(|| episodes.iter().sum::<f64>() / episodes.len() as f64),
                episodes: is_snake.then_some(episodes.len()),
                meta: meta.names().iter().cloned().zip(meta.constrained()).collect(),
                wall_clock: clock(cfg.wall_clock),
                record: None,
            });
        }
    }
    Ok(RunLog { config: cfg.clone(), rows, final_theta: theta, final_meta: meta })
}

fn expect_command(cfg: &ExperimentConfig, want: Command) -> Result<()> {
    if cfg.command != want {
        return Err(Error::config(format!("configuration was resolved for {:?}, not {want:?}", cfg.command)));
    }
    cfg.validate()
}

fn mrp_setup(cfg: &ExperimentConfig) -> Result<(MrpTask, ParamVector, MetaParams)> {
    Ok((
        MrpTask::new(cfg.batch_size, cfg.meta_batch_size)?,
        init_params(NetworkSpec::MrpMlp, cfg.seed)?,
        MetaParams::mrp(cfg.gamma_init)?,
    ))
}

/// Prediction on the 10-state chain with per-state discounts meta-learned.
pub fn run_mrp(cfg: &ExperimentConfig) -> Result<RunLog> {
    expect_command(cfg, Command::Mrp)?;
    let (task, theta, meta) = mrp_setup(cfg)?;
    train(&task, cfg, theta, (), meta, &mut |_, _, _| Ok(Vec::new()))
}

fn snake_env(side: usize, n: usize, stream: Stream) -> SnakeVecEnv {
    SnakeVecEnv::new(SnakeConfig { side, max_steps: MAX_EPISODE_STEPS }, n, stream)
}

/// A2C on Snake with `{γ, λ, c_crit, c_entr}` meta-learned; bias/variance
/// probes every `probe_every` iterations when enabled.
pub fn run_snake(cfg: &ExperimentConfig) -> Result<RunLog> {
    expect_command(cfg, Command::Snake)?;
    let side = cfg.board_size;
    let task = SnakeTask::new(
        SnakeNet::new(side)?,
        OuterParams { gamma: cfg.outer_gamma, lambda: cfg.outer_lambda },
        cfg.rollout_len,
    )?;
    let theta = init_params(NetworkSpec::SnakeActorCritic { side }, cfg.seed)?;
    let env = snake_env(side, cfg.batch_size, Stream::new(cfg.seed).child(tag::ENV));
    let meta = MetaParams::snake(cfg.gamma_init, cfg.lambda_init, cfg.c_crit_init, cfg.c_entr_init)?;
    let every = cfg.probe_every;
    let mut probe = |t: usize, ctx: MetaContext<'_, SnakeTask>, s: Stream| {
        if every > 0 && t < cfg.iterations && t.is_multiple_of(every) {
            sweep_records(ctx, &cfg.probe_ns, cfg.oracle_n, cfg.probe_mix, cfg.probe_shots, s, t)
        } else {
            Ok(Vec::new())
        }
    };
    train(&task, cfg, theta, env, meta, &mut probe)
}

/// Trains with the configured estimator (1-step by default) and, after each
/// checkpoint's number of updates, measures bias and variance of every probed
/// `n` (and its mixture) at the frozen point.
pub fn run_bias_variance_sweep(cfg: &ExperimentConfig) -> Result<RunLog> {
    expect_command(cfg, Command::BiasVariance)?;
    let (task, theta, meta) = mrp_setup(cfg)?;
    let checkpoints = cfg.checkpoint_iterations();
    let mut probe = |t: usize, ctx: MetaContext<'_, MrpTask>, s: Stream| {
        if checkpoints.contains(&t) {
            sweep_records(ctx, &cfg.probe_ns, cfg.oracle_n, cfg.probe_mix, cfg.probe_shots, s, t)
        } else {
            Ok(Vec::new())
        }
    };
    train(&task, cfg, theta, (), meta, &mut probe)
}

/// Mean episode return of a uniformly random policy on `n_envs` boards over
/// `steps` ticks, and the number of episodes it averages.
pub fn random_policy_mean_return(side: usize, n_envs: usize, steps: usize, seed: u64) -> Result<(f64, usize)> {
    let master = Stream::new(seed).child(tag::EVAL);
    let mut env = snake_env(side, n_envs, master.child(tag::ENV));
    random_rollout(&mut env, steps, &mut master.rng())?;
    let r = env.take_completed_returns();
    if r.is_empty() {
        return Err(Error::config("no random-policy episode finished; increase the number of steps"));
    }
    Ok((r.iter().sum::<f64>() / r.len() as f64, r.len()))
}

/// Writes `config.resolved`, `metrics.jsonl` and `plots/*.csv` under `dir`.
pub fn write_outputs(log: &RunLog, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.resolved"), log.config.to_resolved_string())?;
    write_jsonl(&dir.join("metrics.jsonl"), &log.rows)?;
    export_plot_data(&log.rows, dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(command: Command, extra: &[&str]) -> ExperimentConfig {
        let o: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::resolve(command, None, &o).unwrap()
    }

    #[test]
    fn fixed_estimator_keeps_gammas() {
        let log = run_mrp(&cfg(Command::Mrp, &["estimator=fixed", "iterations=20"])).unwrap();
        assert_eq!(log.train_rows().count(), 20);
        for r in log.train_rows() {
            assert!(r.meta.values().all(|&g| (g - 0.5).abs() < 1e-15));
            assert!(r.loss.unwrap() > 0.0);
        }
    }

    #[test]
    fn mrp_runs_are_reproducible() {
        let c = cfg(Command::Mrp, &["iterations=15", "mc_shots=4", "n=2", "log_every=5"]);
        let a = run_mrp(&c).unwrap();
        let b = run_mrp(&c).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.rows.len(), 3);
        assert_ne!(a.rows[2].meta["gamma_0"], 0.5);
    }

    #[test]
    fn sweep_emits_one_record_per_checkpoint_and_n() {
        let c = cfg(
            Command::BiasVariance,
            &["iterations=6", "checkpoints=3", "probe_shots=4", "probe_ns=1,2", "oracle_n=3", "log_every=100"],
        );
        let log = run_bias_variance_sweep(&c).unwrap();
        let recs: Vec<_> = log.records().collect();
        // per checkpoint: nstep-1, nstep-2, mix-2
        assert_eq!(recs.len(), 9);
        assert_eq!(recs.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![2, 2, 2, 4, 4, 4, 6, 6, 6]);
        let c1 = cfg(Command::BiasVariance, &["iterations=4", "checkpoints=2", "probe_shots=3", "probe_ns=1", "oracle_n=1"]);
        let log = run_bias_variance_sweep(&c1).unwrap();
        assert!(log.records().all(|r| r.bias_norm == Some(0.0)));
    }

    #[test]
    fn wrong_command_is_config_error() {
        let c = cfg(Command::Mrp, &[]);
        assert!(matches!(run_snake(&c), Err(Error::Config(_))));
    }
}
