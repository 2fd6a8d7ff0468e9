#![allow(dead_code)]

use metagrad_lab::diff::{self, ParamVector};
use metagrad_lab::env::{Direction, SnakeConfig, SnakeState, SnakeVecEnv};
use metagrad_lab::metagrad::{inner_update, n_step_meta_gradient, InnerOptState, MetaContext, MrpTask, Task};
use metagrad_lab::nn::{init_params, NetworkSpec};
use metagrad_lab::objectives::MetaParams;
use metagrad_lab::rng::{tag, Stream};
use rand::Rng as _;

/// Outer loss after `n` SGD steps, replaying the lookahead's data streams.
pub fn mrp_outer_after(task: &MrpTask, theta0: &ParamVector, eta: &[f64], alpha: f64, n: usize, s: Stream) -> f64 {
    let mut theta = theta0.clone();
    let mut opt = InnerOptState::sgd(alpha, theta.len());
    for j in 0..n {
        let b = task.sample_train(&theta, &mut (), s.path(&[tag::TRAIN, j as u64])).unwrap();
        let (t, o, _) = inner_update(task.inner(), &theta, eta, &b, &opt, None).unwrap();
        theta = t;
        opt = o;
    }
    let vb = task.sample_validation(&theta, &(), s.path(&[tag::VALIDATION, n as u64])).unwrap();
    diff::value(task.outer(), &theta, &[], &vb).unwrap()
}

/// `(meta-gradient, central difference)` per η component for an MRP lookahead.
pub fn mrp_fd_pairs(seed: u64, alpha: f64, n: usize, gamma0: f64) -> Vec<(f64, f64)> {
    let task = MrpTask::new(32, 32).unwrap();
    let theta = init_params(NetworkSpec::MrpMlp, seed).unwrap();
    let eta = MetaParams::mrp(gamma0).unwrap();
    let opt = InnerOptState::sgd(alpha, theta.len());
    let s = Stream::new(seed).child(tag::LOOKAHEAD);
    let ctx = MetaContext { task: &task, theta: &theta, eta: eta.raw(), meta_names: eta.names(), opt: &opt, env: &() };
    let g = n_step_meta_gradient(ctx, n, s).unwrap().estimate.gradient;
    let eps = 1e-5;
    (0..eta.len())
        .map(|k| {
            let mut up = eta.raw().to_vec();
            up[k] += eps;
            let mut dn = eta.raw().to_vec();
            dn[k] -= eps;
            let fd = (mrp_outer_after(&task, &theta, &up, alpha, n, s) - mrp_outer_after(&task, &theta, &dn, alpha, n, s))
                / (2.0 * eps);
            (g[k], fd)
        })
        .collect()
}

/// Relative error with an absolute floor for components that vanish.
pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-8)
}

/// `d/dη ½‖θ_n − c‖²` for `n` SGD steps on `½‖θ − ηb‖²` from `θ_0`.
pub fn quadratic_oracle(theta0: &[f64], b: &[f64], c: &[f64], eta: f64, alpha: f64, n: usize) -> f64 {
    let decay = (1.0 - alpha).powi(n as i32);
    (0..b.len())
        .map(|i| {
            let theta_n = eta * b[i] + decay * (theta0[i] - eta * b[i]);
            (theta_n - c[i]) * b[i] * (1.0 - decay)
        })
        .sum()
}

const MAX_RETURN: f64 = 143.0;

/// Runs `steps` uniformly random actions, checking every per-step property.
/// Returns the completed episode returns.
pub fn random_walk(cfg: SnakeConfig, steps: usize, seed: u64) -> Vec<f64> {
    let mut rng = Stream::new(seed).rng();
    let mut s = SnakeState::reset(cfg, &mut rng);
    let mut ret = 0.0;
    let mut returns = Vec::new();
    for _ in 0..steps {
        let a = Direction::from_index(rng.random_range(0..4));
        let out = s.step(a, &mut rng).unwrap();
        assert!(out.reward == 0.0 || out.reward == 1.0, "reward {}", out.reward);
        ret += out.reward;
        assert!(s.step_count() <= cfg.max_steps);
        assert_eq!(s.body().len(), s.fruits_eaten() + 1);
        if out.done {
            assert!(ret <= MAX_RETURN);
            returns.push(ret);
            ret = 0.0;
            s = SnakeState::reset(cfg, &mut rng);
        }
        s.check_invariants().unwrap();
    }
    returns
}

/// Hashed per-tick outcomes and observations of a random-action vectorised
/// rollout, run on a pool of `threads` workers.
pub fn vec_rollout(seed: u64, threads: usize) -> (Vec<u64>, Vec<f64>) {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| vec_rollout_inner(seed))
}

fn vec_rollout_inner(seed: u64) -> (Vec<u64>, Vec<f64>) {
    let mut env = SnakeVecEnv::new(SnakeConfig::default(), 16, Stream::new(seed));
    let mut rng = Stream::new(seed).child(1).rng();
    let mut trace = Vec::new();
    for _ in 0..2000 {
        let actions: Vec<Direction> = (0..env.len()).map(|_| Direction::from_index(rng.random_range(0..4))).collect();
        for o in env.step(&actions).unwrap() {
            trace.push(o.reward.to_bits() ^ (o.done as u64));
        }
        let obs = env.observations();
        trace.push(obs.iter().fold(0u64, |h, v| h.rotate_left(5) ^ v.to_bits()));
    }
    (trace, env.take_completed_returns())
}
