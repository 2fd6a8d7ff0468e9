//! Meta-parameters, differentiable targets and the inner/outer losses for
//! value prediction and actor-critic control.

mod a2c;
mod meta_params;
mod prediction;
mod returns;
pub mod toy;

pub use a2c::{A2cInnerLoss, A2cOuterLoss, SnakeBatch};
pub use meta_params::{Constraint, MetaParams, OuterParams};
pub use prediction::{MrpBatch, PredictionInnerLoss, PredictionOuterLoss};
pub use returns::{lambda_return, mrp_outer_target, mrp_target};
