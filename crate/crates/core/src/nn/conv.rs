use std::sync::Arc;

use rayon::prelude::*;

use super::layers::{dense_backward, dense_forward, relu_mask};
use super::mlp::split_pair;
use super::InitRule;
use crate::diff::{Layout, ParamVector, Real};
use crate::error::{Error, Result};

pub const SNAKE_CHANNELS: usize = 5;
pub const SNAKE_ACTIONS: usize = 4;
const MAPS: usize = 32;
const FC: usize = 40;
const HEAD: usize = 30;
/// Samples per reduction chunk. Fixed so the gradient sum order never depends
/// on the number of worker threads.
const CHUNK: usize = 16;

/// Conv + two-head MLP actor-critic over `side × side × 5` observations
/// (row-major, channels last). Same-padding convolutions, rectifier
/// activations, 2×2 max pooling.
#[derive(Clone, Debug)]
pub struct SnakeNet {
    side: usize,
    layout: Arc<Layout>,
}

struct Cache<T> {
    a1: Vec<T>,
    pool1_arg: Vec<u32>,
    p1: Vec<T>,
    a2: Vec<T>,
    pool2_arg: Vec<u32>,
    p2: Vec<T>,
    h: Vec<T>,
    u: Vec<T>,
    z: Vec<T>,
}

/// Outputs of a batched forward pass plus the activations needed to run the
/// reverse sweep.
pub struct SnakeForward<T> {
    pub logits: Vec<T>,
    pub values: Vec<T>,
    caches: Vec<Cache<T>>,
}

impl SnakeNet {
    pub fn new(side: usize) -> Result<Self> {
        if side == 0 || !side.is_multiple_of(4) {
            return Err(Error::config(format!("snake board side must be a positive multiple of 4, got {side}")));
        }
        let flat = (side / 4) * (side / 4) * MAPS;
        let layout = Layout::new([
            ("conv1.w", vec![3, 3, SNAKE_CHANNELS, MAPS]),
            ("conv1.b", vec![MAPS]),
            ("conv2.w", vec![3, 3, MAPS, MAPS]),
            ("conv2.b", vec![MAPS]),
            ("fc.w", vec![flat, FC]),
            ("fc.b", vec![FC]),
            ("pi1.w", vec![FC, HEAD]),
            ("pi1.b", vec![HEAD]),
            ("pi2.w", vec![HEAD, SNAKE_ACTIONS]),
            ("pi2.b", vec![SNAKE_ACTIONS]),
            ("v1.w", vec![FC, HEAD]),
            ("v1.b", vec![HEAD]),
            ("v2.w", vec![HEAD, 1]),
            ("v2.b", vec![1]),
        ]);
        Ok(SnakeNet { side, layout })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn obs_len(&self) -> usize {
        self.side * self.side * SNAKE_CHANNELS
    }

    pub(crate) fn init_rules(&self) -> Vec<InitRule> {
        let flat = (self.side / 4) * (self.side / 4) * MAPS;
        vec![
            InitRule { weight: "conv1.w", bias: "conv1.b", fan_in: 9 * SNAKE_CHANNELS, scale: 2.0 },
            InitRule { weight: "conv2.w", bias: "conv2.b", fan_in: 9 * MAPS, scale: 2.0 },
            InitRule { weight: "fc.w", bias: "fc.b", fan_in: flat, scale: 2.0 },
            InitRule { weight: "pi1.w", bias: "pi1.b", fan_in: FC, scale: 2.0 },
            InitRule { weight: "pi2.w", bias: "pi2.b", fan_in: HEAD, scale: 0.01 },
            InitRule { weight: "v1.w", bias: "v1.b", fan_in: FC, scale: 2.0 },
            InitRule { weight: "v2.w", bias: "v2.b", fan_in: HEAD, scale: 1.0 },
        ]
    }

    fn seg<'a, T>(&self, theta: &'a [T], name: &str) -> &'a [T] {
        &theta[self.layout.segment(name).expect("known segment").range()]
    }

    fn range(&self, name: &str) -> std::ops::Range<usize> {
        self.layout.segment(name).expect("known segment").range()
    }

    /// Forward pass over `obs.len() / obs_len()` observations.
    pub fn forward<T: Real>(&self, theta: &[T], obs: &[f64]) -> Result<SnakeForward<T>> {
        if theta.len() != self.layout.len() {
            return Err(Error::config("parameter vector does not match the snake network layout"));
        }
        let ol = self.obs_len();
        if obs.is_empty() || !obs.len().is_multiple_of(ol) {
            return Err(Error::config(format!(
                "observation buffer of length {} is not a whole number of {}x{}x{} observations",
                obs.len(),
                self.side,
                self.side,
                SNAKE_CHANNELS
            )));
        }
        let caches: Vec<Cache<T>> = obs.par_chunks(ol).map(|o| self.forward_one(theta, o)).collect();
        let mut logits = Vec::with_capacity(caches.len() * SNAKE_ACTIONS);
        let mut values = Vec::with_capacity(caches.len());
        for c in &caches {
            let mut l = [T::zero(); SNAKE_ACTIONS];
            dense_forward(self.seg(theta, "pi2.w"), self.seg(theta, "pi2.b"), &c.u, HEAD, SNAKE_ACTIONS, &mut l);
            logits.extend_from_slice(&l);
            let mut v = [T::zero()];
            dense_forward(self.seg(theta, "v2.w"), self.seg(theta, "v2.b"), &c.z, HEAD, 1, &mut v);
            values.push(v[0]);
        }
        Ok(SnakeForward { logits, values, caches })
    }

    fn forward_one<T: Real>(&self, theta: &[T], obs: &[f64]) -> Cache<T> {
        let s = self.side;
        let x: Vec<T> = obs.iter().map(|&v| T::cst(v)).collect();
        let mut a1 = vec![T::zero(); s * s * MAPS];
        conv3x3_forward(&x, s, SNAKE_CHANNELS, self.seg(theta, "conv1.w"), self.seg(theta, "conv1.b"), MAPS, &mut a1);
        a1.iter_mut().for_each(|v| *v = v.relu());
        let (p1, pool1_arg) = maxpool2(&a1, s, MAPS);
        let s2 = s / 2;
        let mut a2 = vec![T::zero(); s2 * s2 * MAPS];
        conv3x3_forward(&p1, s2, MAPS, self.seg(theta, "conv2.w"), self.seg(theta, "conv2.b"), MAPS, &mut a2);
        a2.iter_mut().for_each(|v| *v = v.relu());
        let (p2, pool2_arg) = maxpool2(&a2, s2, MAPS);
        let flat = p2.len();
        let mut h = vec![T::zero(); FC];
        dense_forward(self.seg(theta, "fc.w"), self.seg(theta, "fc.b"), &p2, flat, FC, &mut h);
        h.iter_mut().for_each(|v| *v = v.relu());
        let mut u = vec![T::zero(); HEAD];
        dense_forward(self.seg(theta, "pi1.w"), self.seg(theta, "pi1.b"), &h, FC, HEAD, &mut u);
        u.iter_mut().for_each(|v| *v = v.relu());
        let mut z = vec![T::zero(); HEAD];
        dense_forward(self.seg(theta, "v1.w"), self.seg(theta, "v1.b"), &h, FC, HEAD, &mut z);
        z.iter_mut().for_each(|v| *v = v.relu());
        Cache { a1, pool1_arg, p1, a2, pool2_arg, p2, h, u, z }
    }

    /// Parameter gradient given `dL/dlogits` (`4` per sample) and `dL/dvalue`.
    pub fn backward<T: Real>(
        &self,
        theta: &[T],
        fwd: &SnakeForward<T>,
        obs: &[f64],
        d_logits: &[T],
        d_values: &[T],
    ) -> Vec<T> {
        let ol = self.obs_len();
        let n = fwd.caches.len();
        let partials: Vec<Vec<T>> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut grad = vec![T::zero(); self.layout.len()];
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    self.backward_one(
                        theta,
                        &fwd.caches[i],
                        &obs[i * ol..(i + 1) * ol],
                        &d_logits[i * SNAKE_ACTIONS..(i + 1) * SNAKE_ACTIONS],
                        d_values[i],
                        &mut grad,
                    );
                }
                grad
            })
            .collect();
        let mut grad = vec![T::zero(); self.layout.len()];
        for p in partials {
            for (g, v) in grad.iter_mut().zip(p) {
                *g += v;
            }
        }
        grad
    }

    fn backward_one<T: Real>(&self, theta: &[T], c: &Cache<T>, obs: &[f64], dl: &[T], dv: T, grad: &mut [T]) {
        let s = self.side;
        let s2 = s / 2;
        let flat = c.p2.len();

        // value head
        let mut dz = vec![T::zero(); HEAD];
        {
            let (w, b) = split_pair(grad, self.range("v2.w"), self.range("v2.b"));
            dense_backward(self.seg(theta, "v2.w"), &c.z, &[dv], HEAD, 1, w, b, Some(&mut dz));
        }
        relu_mask(&c.z, &mut dz);
        let mut dh = vec![T::zero(); FC];
        {
            let (w, b) = split_pair(grad, self.range("v1.w"), self.range("v1.b"));
            dense_backward(self.seg(theta, "v1.w"), &c.h, &dz, FC, HEAD, w, b, Some(&mut dh));
        }
        // policy head
        let mut du = vec![T::zero(); HEAD];
        {
            let (w, b) = split_pair(grad, self.range("pi2.w"), self.range("pi2.b"));
            dense_backward(self.seg(theta, "pi2.w"), &c.u, dl, HEAD, SNAKE_ACTIONS, w, b, Some(&mut du));
        }
        relu_mask(&c.u, &mut du);
        {
            let (w, b) = split_pair(grad, self.range("pi1.w"), self.range("pi1.b"));
            dense_backward(self.seg(theta, "pi1.w"), &c.h, &du, FC, HEAD, w, b, Some(&mut dh));
        }
        // trunk
        relu_mask(&c.h, &mut dh);
        let mut dp2 = vec![T::zero(); flat];
        {
            let (w, b) = split_pair(grad, self.range("fc.w"), self.range("fc.b"));
            dense_backward(self.seg(theta, "fc.w"), &c.p2, &dh, flat, FC, w, b, Some(&mut dp2));
        }
        let mut da2 = vec![T::zero(); c.a2.len()];
        for (k, &src) in c.pool2_arg.iter().enumerate() {
            da2[src as usize] += dp2[k];
        }
        relu_mask(&c.a2, &mut da2);
        let mut dp1 = vec![T::zero(); c.p1.len()];
        {
            let (w, b) = split_pair(grad, self.range("conv2.w"), self.range("conv2.b"));
            conv3x3_backward(&c.p1, s2, MAPS, self.seg(theta, "conv2.w"), &da2, MAPS, w, b, Some(&mut dp1));
        }
        let mut da1 = vec![T::zero(); c.a1.len()];
        for (k, &src) in c.pool1_arg.iter().enumerate() {
            da1[src as usize] += dp1[k];
        }
        relu_mask(&c.a1, &mut da1);
        let x: Vec<T> = obs.iter().map(|&v| T::cst(v)).collect();
        let (w, b) = split_pair(grad, self.range("conv1.w"), self.range("conv1.b"));
        conv3x3_backward(&x, s, SNAKE_CHANNELS, self.seg(theta, "conv1.w"), &da1, MAPS, w, b, None);
    }

    /// Logits and value for a single observation.
    pub fn forward_single(&self, theta: &ParamVector, obs: &[f64]) -> Result<([f64; SNAKE_ACTIONS], f64)> {
        if obs.len() != self.obs_len() {
            return Err(Error::config(format!(
                "expected a {}x{}x{} observation, got {} values",
                self.side,
                self.side,
                SNAKE_CHANNELS,
                obs.len()
            )));
        }
        theta.check_layout(&self.layout)?;
        let f = self.forward::<f64>(theta.values(), obs)?;
        let mut l = [0.0; SNAKE_ACTIONS];
        l.copy_from_slice(&f.logits);
        Ok((l, f.values[0]))
    }
}

/// Same-padded 3×3 stride-1 convolution on a `side × side × cin` map.
/// Weights are `(3, 3, cin, cout)`.
fn conv3x3_forward<T: Real>(x: &[T], side: usize, cin: usize, w: &[T], b: &[T], cout: usize, out: &mut [T]) {
    for y in 0..side {
        for xx in 0..side {
            let o = &mut out[(y * side + xx) * cout..(y * side + xx + 1) * cout];
            o.copy_from_slice(b);
            for ky in 0..3 {
                let Some(iy) = (y + ky).checked_sub(1).filter(|&v| v < side) else { continue };
                for kx in 0..3 {
                    let Some(ix) = (xx + kx).checked_sub(1).filter(|&v| v < side) else { continue };
                    let xin = &x[(iy * side + ix) * cin..(iy * side + ix + 1) * cin];
                    let wbase = (ky * 3 + kx) * cin;
                    for (ci, &xv) in xin.iter().enumerate() {
                        if xv.is_zero() {
                            continue;
                        }
                        let wr = &w[(wbase + ci) * cout..(wbase + ci + 1) * cout];
                        for (ov, &wv) in o.iter_mut().zip(wr) {
                            *ov += xv * wv;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward<T: Real>(
    x: &[T],
    side: usize,
    cin: usize,
    w: &[T],
    dout: &[T],
    cout: usize,
    dw: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    for y in 0..side {
        for xx in 0..side {
            let d = &dout[(y * side + xx) * cout..(y * side + xx + 1) * cout];
            if d.iter().all(|v| v.is_zero()) {
                continue;
            }
            for (g, &v) in db.iter_mut().zip(d) {
                *g += v;
            }
            for ky in 0..3 {
                let Some(iy) = (y + ky).checked_sub(1).filter(|&v| v < side) else { continue };
                for kx in 0..3 {
                    let Some(ix) = (xx + kx).checked_sub(1).filter(|&v| v < side) else { continue };
                    let q = (iy * side + ix) * cin;
                    let wbase = (ky * 3 + kx) * cin;
                    for ci in 0..cin {
                        let xv = x[q + ci];
                        let r = (wbase + ci) * cout..(wbase + ci + 1) * cout;
                        if !xv.is_zero() {
                            for (g, &v) in dw[r.clone()].iter_mut().zip(d) {
                                *g += xv * v;
                            }
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            let mut acc = T::zero();
                            for (&wv, &v) in w[r].iter().zip(d) {
                                acc += wv * v;
                            }
                            dx[q + ci] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 stride-2 max pooling; returns pooled map and the flat source index of
/// each maximum (first one on ties).
fn maxpool2<T: Real>(x: &[T], side: usize, ch: usize) -> (Vec<T>, Vec<u32>) {
    let half = side / 2;
    let mut out = Vec::with_capacity(half * half * ch);
    let mut arg = Vec::with_capacity(half * half * ch);
    for y in 0..half {
        for xx in 0..half {
            for c in 0..ch {
                let mut best = (2 * y * side + 2 * xx) * ch + c;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * y + dy) * side + 2 * xx + dx) * ch + c;
                    if x[idx].value() > x[best].value() {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, softmax, NetworkSpec};
    use rand::Rng as _;

    fn random_obs(side: usize, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::Stream::new(seed).rng();
        (0..n * side * side * SNAKE_CHANNELS)
            .map(|i| if i % 5 == 4 { (i / 5) as f64 / (side * side - 1) as f64 } else if rng.random::<f64>() < 0.1 { 1.0 } else { 0.0 })
            .collect()
    }

    #[test]
    fn zero_parameters_give_uniform_policy() {
        let net = SnakeNet::new(12).unwrap();
        let theta = ParamVector::zeros(net.layout().clone());
        let (logits, value) = net.forward_single(&theta, &random_obs(12, 1, 1)).unwrap();
        assert!(logits.iter().all(|&l| l == logits[0]));
        assert_eq!(value, 0.0);
        let p = softmax(&logits);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_wrong_observation_shape() {
        let net = SnakeNet::new(12).unwrap();
        let theta = ParamVector::zeros(net.layout().clone());
        assert!(net.forward_single(&theta, &vec![0.0; 12 * 12 * 4]).is_err());
    }

    #[test]
    fn output_shapes() {
        let net = SnakeNet::new(12).unwrap();
        let theta = init_params(NetworkSpec::SnakeActorCritic { side: 12 }, 2).unwrap();
        let f = net.forward::<f64>(theta.values(), &random_obs(12, 3, 2)).unwrap();
        assert_eq!(f.logits.len(), 12);
        assert_eq!(f.values.len(), 3);
        assert!(f.logits.iter().chain(&f.values).all(|v| v.is_finite()));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let side = 8;
        let net = SnakeNet::new(side).unwrap();
        let theta = init_params(NetworkSpec::SnakeActorCritic { side }, 9).unwrap();
        let obs = random_obs(side, 2, 4);
        let wl = [0.3, -1.0, 0.5, 2.0, -0.2, 0.1, 0.7, -0.4];
        let wv = [1.5, -0.5];
        let f = |p: &[f64]| -> f64 {
            let o = net.forward::<f64>(p, &obs).unwrap();
            o.logits.iter().zip(&wl).map(|(a, b)| a * b).sum::<f64>()
                + o.values.iter().zip(&wv).map(|(a, b)| 0.5 * b * a * a).sum::<f64>()
        };
        let fwd = net.forward::<f64>(theta.values(), &obs).unwrap();
        let dv: Vec<f64> = fwd.values.iter().zip(&wv).map(|(a, b)| a * b).collect();
        let g = net.backward(theta.values(), &fwd, &obs, &wl, &dv);
        let h = 1e-6;
        let mut rng = crate::rng::Stream::new(3).rng();
        for _ in 0..300 {
            let i = rng.random_range(0..theta.len());
            let mut p = theta.values().to_vec();
            p[i] += h;
            let up = f(&p);
            p[i] -= 2.0 * h;
            let dn = f(&p);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", g[i]);
        }
    }
}
