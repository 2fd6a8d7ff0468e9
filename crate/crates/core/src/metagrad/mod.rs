//! Inner updates, multi-step, Monte Carlo, mixed and trace meta-gradient
//! estimators, and the meta-update.

mod lookahead;
mod optim;
mod task;

pub use lookahead::{
    accumulative_trace_meta_gradient, auto_kappa, commit_step, lookahead_panel, mc_meta_gradient, mean_and_variance,
    mixed_meta_gradient, mixing_weights, n_step_meta_gradient, shot_estimates, shot_stream, weighted_sum, Consumed,
    Estimator, IterationOutcome, LookaheadResult, McEstimate, MetaContext, MetaGradEstimate,
};
pub use optim::{clip_by_norm, inner_update, meta_update, InnerOptKind, InnerOptState, LrSchedule, MetaOptState};
pub use task::{random_rollout, snake_rollout, MrpTask, QuadraticTask, SnakeTask, Task};
