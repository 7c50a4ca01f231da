//! Local-descriptor sets, episodes and class-level aggregation.

mod dataset;
mod episode;
mod pool;
mod set;
pub mod tds;

pub use dataset::{parse_manifest, parse_masks, Dataset, MasksFile};
pub use episode::{Episode, LabeledSample, SampleRef};
pub use pool::{build_class_pool, pool_weights, AggregationMode, ClassPool};
pub use set::{flatten_feature_map, unflatten, DescriptorSet};
