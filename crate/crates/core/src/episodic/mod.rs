//! Episode sampling, training, evaluation, ablation and the planted-cluster
//! generator.

mod eval;
mod sampler;
mod synth;
mod train;

pub use eval::{ablate, evaluate, AblationReport, AblationRow, EvalConfig, EvalReport};
pub use sampler::{episode_seed, sample_episode, EpisodeSpec};
pub use synth::{generate_synthetic, SyntheticSpec};
pub use train::{train, LossRecord, TrainConfig};
