use rand_distr::{Distribution, StandardNormal};

use crate::rng::Rng;

pub const MRP_STATES: usize = 10;
const EVEN_REWARD: f64 = 0.1;

/// One left-to-right traversal of the chain: the reward emitted in each state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MrpTrajectory {
    pub rewards: [f64; MRP_STATES],
}

/// Scalar network input for state `s_i`: `i / 9`.
pub fn mrp_state_input(i: usize) -> f64 {
    i as f64 / (MRP_STATES - 1) as f64
}

impl MrpTrajectory {
    pub fn state_inputs() -> [f64; MRP_STATES] {
        std::array::from_fn(mrp_state_input)
    }
}

/// Even states pay a deterministic 0.1, odd states a standard normal draw.
pub fn mrp_rollout(rng: &mut Rng) -> MrpTrajectory {
    let mut rewards = [0.0; MRP_STATES];
    for (i, r) in rewards.iter_mut().enumerate() {
        *r = if i % 2 == 0 { EVEN_REWARD } else { StandardNormal.sample(rng) };
    }
    MrpTrajectory { rewards }
}
