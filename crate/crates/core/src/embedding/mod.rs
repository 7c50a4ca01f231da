//! Feature extractors and the descriptor transform layer.

mod backbone;
pub mod layers;
mod transform;

pub use backbone::{Backbone, BackboneKind, GridDims};
pub use layers::{apply_bn_observations, BnObservation, Mode};
pub use transform::{transform, TransformConfig, TransformInit};
