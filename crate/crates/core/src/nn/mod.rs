//! The two agent networks, written as pure functions of a flat parameter
//! vector and generic over the scalar type so the same code serves value,
//! gradient and second-order passes.

mod conv;
mod layers;
mod mlp;

use std::sync::Arc;

use rand::Rng as _;

pub use conv::{SnakeForward, SnakeNet, SNAKE_ACTIONS, SNAKE_CHANNELS};
pub use mlp::{mrp_value, MlpForward, MrpMlp};

use crate::diff::{Layout, ParamVector};
use crate::error::Result;
use crate::rng::{tag, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetworkSpec {
    /// 1 → 10 → 10 → 1, tanh hidden units.
    MrpMlp,
    /// Two conv(3×3, 32) + maxpool(2) blocks, linear 40, then a (30, 4)
    /// policy head and a (30, 1) value head. `side` must be a multiple of 4.
    SnakeActorCritic { side: usize },
}

impl NetworkSpec {
    pub fn layout(&self) -> Result<Arc<Layout>> {
        Ok(match *self {
            NetworkSpec::MrpMlp => MrpMlp::new().layout().clone(),
            NetworkSpec::SnakeActorCritic { side } => SnakeNet::new(side)?.layout().clone(),
        })
    }
}

/// Per-layer weight initialisation: uniform with variance `scale / fan_in`,
/// biases zero.
pub(crate) struct InitRule {
    pub weight: &'static str,
    pub bias: &'static str,
    pub fan_in: usize,
    pub scale: f64,
}

pub fn init_params(spec: NetworkSpec, seed: u64) -> Result<ParamVector> {
    let (layout, rules) = match spec {
        NetworkSpec::MrpMlp => {
            let net = MrpMlp::new();
            (net.layout().clone(), MrpMlp::init_rules())
        }
        NetworkSpec::SnakeActorCritic { side } => {
            let net = SnakeNet::new(side)?;
            (net.layout().clone(), net.init_rules())
        }
    };
    let mut rng = Stream::new(seed).child(tag::INIT).rng();
    let mut theta = ParamVector::zeros(layout.clone());
    for rule in rules {
        let limit = (3.0 * rule.scale / rule.fan_in as f64).sqrt();
        let seg = layout.segment(rule.weight).expect("init rule names a layout segment").range();
        for w in &mut theta.values_mut()[seg] {
            *w = rng.random_range(-limit..limit);
        }
        debug_assert!(layout.segment(rule.bias).is_some());
    }
    Ok(theta)
}

/// Numerically stable softmax of one row of logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let a = init_params(NetworkSpec::MrpMlp, 3).unwrap();
        let b = init_params(NetworkSpec::MrpMlp, 3).unwrap();
        let c = init_params(NetworkSpec::MrpMlp, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn mrp_parameter_count() {
        assert_eq!(NetworkSpec::MrpMlp.layout().unwrap().len(), 141);
    }

    #[test]
    fn biases_start_at_zero() {
        let p = init_params(NetworkSpec::SnakeActorCritic { side: 12 }, 1).unwrap();
        for seg in p.layout().segments() {
            if seg.name.ends_with(".b") {
                assert!(p.values()[seg.range()].iter().all(|&x| x == 0.0), "{}", seg.name);
            }
        }
    }

    #[test]
    fn snake_conv_shapes() {
        let l = NetworkSpec::SnakeActorCritic { side: 12 }.layout().unwrap();
        assert_eq!(l.segment("conv1.w").unwrap().shape, vec![3, 3, 5, 32]);
        assert_eq!(l.segment("conv2.w").unwrap().shape, vec![3, 3, 32, 32]);
        assert_eq!(l.segment("fc.w").unwrap().shape, vec![288, 40]);
        assert_eq!(l.segment("pi2.w").unwrap().shape, vec![30, 4]);
        assert_eq!(l.segment("v2.w").unwrap().shape, vec![30, 1]);
        assert!(NetworkSpec::SnakeActorCritic { side: 10 }.layout().is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -3.0, 0.5, 2.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
