//! Graph-network policies for long-horizon pick-and-place tasks, learned from a handful of demonstrations.

pub mod demos;
pub mod error;
pub mod explain;
pub mod learn;
pub mod numerics;
pub mod persist;
pub mod policy;
pub mod scenegraph;
pub mod worlds;

pub use error::{Error, Result};
