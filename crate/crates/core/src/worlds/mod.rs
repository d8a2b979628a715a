//! Symbolic manipulation worlds: block stacking, boxes and a two-tray dishwasher.

mod build;
mod rules;
mod state;

pub use build::{reset, Bounds, Family, WorldSpec, BOWL_FLIPPED, MIN_SEPARATION, PLATE_FLAT, PLATE_UPRIGHT, TRAY_SLOTS};
pub use rules::{feasible, feasible_actions, metric_goals_fraction, resolve, reward, step, ActionTuple, Reason, StepOutcome, TrayOp};
pub use state::*;
