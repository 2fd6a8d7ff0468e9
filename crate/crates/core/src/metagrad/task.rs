use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::diff::{Objective, ParamVector};
use crate::env::{mrp_rollout, Direction, SnakeVecEnv};
use crate::error::{Error, Result};
use crate::nn::{softmax, SnakeNet, SNAKE_ACTIONS};
use crate::objectives::toy::{ShiftedQuadratic, TargetQuadratic};
use crate::objectives::{
    A2cInnerLoss, A2cOuterLoss, MrpBatch, OuterParams, PredictionInnerLoss, PredictionOuterLoss, SnakeBatch,
};
use crate::rng::{tag, Rng, Stream};

/// A learning problem seen by the meta-gradient estimators: an inner and an
/// outer loss over the same kind of batch, plus a way to draw batches from
/// the agent at given parameters.
///
/// `Env` carries whatever environment state persists between training
/// batches. Training batches advance it; validation batches never do.
pub trait Task: Sync {
    type Inner: Objective;
    type Outer: Objective<Batch = <Self::Inner as Objective>::Batch>;
    type Env: Clone + Send + Sync;

    fn inner(&self) -> &Self::Inner;
    fn outer(&self) -> &Self::Outer;

    fn sample_train(
        &self,
        theta: &ParamVector,
        env: &mut Self::Env,
        stream: Stream,
    ) -> Result<<Self::Inner as Objective>::Batch>;

    fn sample_validation(
        &self,
        theta: &ParamVector,
        env: &Self::Env,
        stream: Stream,
    ) -> Result<<Self::Inner as Objective>::Batch>;
}

/// Value prediction on the 10-state chain.
#[derive(Clone, Debug)]
pub struct MrpTask {
    inner: PredictionInnerLoss,
    outer: PredictionOuterLoss,
    pub batch_size: usize,
    pub meta_batch_size: usize,
}

impl MrpTask {
    pub fn new(batch_size: usize, meta_batch_size: usize) -> Result<Self> {
        if batch_size == 0 || meta_batch_size == 0 {
            return Err(Error::config("batch sizes must be positive"));
        }
        Ok(MrpTask { inner: PredictionInnerLoss::new(), outer: PredictionOuterLoss::new(), batch_size, meta_batch_size })
    }

    fn draw(n: usize, stream: Stream) -> MrpBatch {
        let mut rng = stream.rng();
        MrpBatch { trajectories: (0..n).map(|_| mrp_rollout(&mut rng)).collect() }
    }
}

impl Task for MrpTask {
    type Inner = PredictionInnerLoss;
    type Outer = PredictionOuterLoss;
    type Env = ();

    fn inner(&self) -> &PredictionInnerLoss {
        &self.inner
    }

    fn outer(&self) -> &PredictionOuterLoss {
        &self.outer
    }

    fn sample_train(&self, _theta: &ParamVector, _env: &mut (), stream: Stream) -> Result<MrpBatch> {
        Ok(Self::draw(self.batch_size, stream))
    }

    fn sample_validation(&self, _theta: &ParamVector, _env: &(), stream: Stream) -> Result<MrpBatch> {
        Ok(Self::draw(self.meta_batch_size, stream))
    }
}

/// A2C on a batch of Snake boards. Validation rollouts continue from a copy
/// of the current boards, so they use as many environments as training.
#[derive(Clone, Debug)]
pub struct SnakeTask {
    inner: A2cInnerLoss,
    outer: A2cOuterLoss,
    pub rollout_len: usize,
}

impl SnakeTask {
    pub fn new(net: SnakeNet, outer: OuterParams, rollout_len: usize) -> Result<Self> {
        if rollout_len == 0 {
            return Err(Error::config("rollout length must be positive"));
        }
        Ok(SnakeTask { inner: A2cInnerLoss::new(net.clone()), outer: A2cOuterLoss::new(net, outer), rollout_len })
    }

    pub fn net(&self) -> &SnakeNet {
        self.inner.net()
    }
}

fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Runs `horizon` steps of the policy at `theta` on every board and packs
/// them into an environment-major batch (with bootstrap observations).
pub fn snake_rollout(
    net: &SnakeNet,
    theta: &ParamVector,
    env: &mut SnakeVecEnv,
    horizon: usize,
    rng: &mut Rng,
) -> Result<SnakeBatch> {
    rollout_with(env, horizon, |obs| {
        let fwd = net.forward::<f64>(theta.values(), obs)?;
        Ok(fwd
            .logits
            .chunks(SNAKE_ACTIONS)
            .map(|l| sample_categorical(&softmax(l), rng))
            .collect())
    })
}

/// Same as [`snake_rollout`] with uniformly random actions.
pub fn random_rollout(env: &mut SnakeVecEnv, horizon: usize, rng: &mut Rng) -> Result<SnakeBatch> {
    let n = env.len();
    rollout_with(env, horizon, |_| Ok((0..n).map(|_| rng.random_range(0..SNAKE_ACTIONS)).collect()))
}

fn rollout_with(
    env: &mut SnakeVecEnv,
    horizon: usize,
    mut policy: impl FnMut(&[f64]) -> Result<Vec<usize>>,
) -> Result<SnakeBatch> {
    let n = env.len();
    let ol = env.obs_len();
    let mut ticks = Vec::with_capacity(horizon + 1);
    let mut actions = vec![0; n * horizon];
    let mut rewards = vec![0.0; n * horizon];
    let mut dones = vec![false; n * horizon];
    for t in 0..horizon {
        let obs = env.observations();
        let acts = policy(&obs)?;
        let dirs: Vec<Direction> = acts.iter().map(|&a| Direction::from_index(a)).collect();
        let out = env.step(&dirs)?;
        for e in 0..n {
            actions[e * horizon + t] = acts[e];
            rewards[e * horizon + t] = out[e].reward;
            dones[e * horizon + t] = out[e].done;
        }
        ticks.push(obs);
    }
    ticks.push(env.observations());
    let mut obs = Vec::with_capacity(n * (horizon + 1) * ol);
    for e in 0..n {
        for tick in &ticks {
            obs.extend_from_slice(&tick[e * ol..(e + 1) * ol]);
        }
    }
    Ok(SnakeBatch { n_envs: n, horizon, obs, actions, rewards, dones })
}

impl Task for SnakeTask {
    type Inner = A2cInnerLoss;
    type Outer = A2cOuterLoss;
    type Env = SnakeVecEnv;

    fn inner(&self) -> &A2cInnerLoss {
        &self.inner
    }

    fn outer(&self) -> &A2cOuterLoss {
        &self.outer
    }

    fn sample_train(&self, theta: &ParamVector, env: &mut SnakeVecEnv, stream: Stream) -> Result<SnakeBatch> {
        env.reseed(stream.child(tag::ENV));
        snake_rollout(self.net(), theta, env, self.rollout_len, &mut stream.rng())
    }

    fn sample_validation(&self, theta: &ParamVector, env: &SnakeVecEnv, stream: Stream) -> Result<SnakeBatch> {
        let mut env = env.fork(stream.child(tag::ENV));
        snake_rollout(self.net(), theta, &mut env, self.rollout_len, &mut stream.rng())
    }
}

/// A closed-form toy inner loss with Gaussian batch noise `ξ ~ N(0, σ²)`,
/// evaluated by `½‖θ − c‖²`.
#[derive(Clone, Debug)]
pub struct QuadraticTask<I = ShiftedQuadratic> {
    inner: I,
    outer: TargetQuadratic,
    pub noise_std: f64,
}

impl<I> QuadraticTask<I> {
    pub fn new(inner: I, target: Vec<f64>, noise_std: f64) -> Self {
        QuadraticTask { inner, outer: TargetQuadratic::new(target), noise_std }
    }

    fn noise(&self, n: usize, stream: Stream) -> Vec<f64> {
        if self.noise_std == 0.0 {
            return Vec::new();
        }
        let mut rng = stream.rng();
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                self.noise_std * z
            })
            .collect()
    }
}

impl<I: Objective<Batch = Vec<f64>>> Task for QuadraticTask<I> {
    type Inner = I;
    type Outer = TargetQuadratic;
    type Env = ();

    fn inner(&self) -> &I {
        &self.inner
    }

    fn outer(&self) -> &TargetQuadratic {
        &self.outer
    }

    fn sample_train(&self, theta: &ParamVector, _env: &mut (), stream: Stream) -> Result<Vec<f64>> {
        Ok(self.noise(theta.len(), stream))
    }

    fn sample_validation(&self, _theta: &ParamVector, _env: &(), _stream: Stream) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }
}
