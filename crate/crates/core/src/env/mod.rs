//! The 10-state Markov reward process and the Snake game.

mod mrp;
mod snake;

pub use mrp::{mrp_rollout, mrp_state_input, MrpTrajectory, MRP_STATES};
pub use snake::{Direction, SnakeConfig, SnakeState, SnakeVecEnv, StepOutcome, MAX_EPISODE_STEPS};
