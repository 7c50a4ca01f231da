//! Task-aware adaptive local-descriptor selection for few-shot classification.
//!
//! The pipeline embeds every image of an episode into a set of local
//! descriptors, keeps the discriminative support descriptors of each class,
//! weights query descriptors by a learned attention gate and classifies
//! queries by their k-nearest-neighbour similarity to each class.

// `!(a < b)` is used on purpose so NaN falls on the failing side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod descriptors;
pub mod diffmath;
pub mod embedding;
pub mod episodic;
pub mod error;
pub mod model;
pub mod scoring;
pub mod selection;

pub use error::{Error, Result};
