//! Graph-network and MLP policies with per-node pick/place heads.

mod batch;
mod forward;
pub mod layers;
mod params;

pub use batch::GraphBatch;
pub use forward::{
    action_log_prob, distributions, forward, policy_forward, policy_forward_batch, select_action, value_batch,
    ActionDistributions, Bound, ForwardOut, SelectMode,
};
pub use layers::{attention_layer, gated_layer, gcn_layer, sage_layer, EdgeIndex, GruVars};
pub use params::{Architecture, GnnConfig, PolicyParams, ORIENTATIONS, TRAY_OPS};
