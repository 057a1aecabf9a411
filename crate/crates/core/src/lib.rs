//! Reduced-order CoM model learning for a planar biped.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod biped;
pub mod cmaes;
pub mod config;
pub mod curriculum;
pub mod error;
pub mod export;
pub mod osc;
pub mod planner;
pub mod rollout;
pub mod rom;
pub mod task;
pub mod train;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use task::Task;
