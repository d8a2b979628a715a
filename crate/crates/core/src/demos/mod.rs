//! Scripted experts, demonstration recording and augmentation, and the on-disk corpus.

mod dataset;
mod expert;
pub mod file;

pub use dataset::{
    augment, blockworld_corpus, blockworld_specs, dishwasher_corpus, make_targets, permute_pair, record, record_episode,
    to_samples, DemoDataset, Divergence, HeadTargets, Pair, Sample, Source, Trajectory,
};
pub use expert::{expert, expert_blocks, expert_dishwasher, expert_rearrange};
