//! Imitation and reinforcement learning plus greedy evaluation.

mod eval;
mod il;
mod metrics;
mod ppo;

pub use eval::*;
pub use il::*;
pub use metrics::*;
pub use ppo::*;
