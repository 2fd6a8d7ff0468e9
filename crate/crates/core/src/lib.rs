//! Multi-step and mixed meta-gradient estimators for self-tuning
//! reinforcement-learning hyper-parameters, with bias/variance measurement.

pub mod analysis;
pub mod diff;
pub mod env;
pub mod error;
pub mod harness;
pub mod metagrad;
pub mod nn;
pub mod objectives;
pub mod rng;

pub use error::{Error, Result};
