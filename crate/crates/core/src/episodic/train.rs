use serde::{Deserialize, Serialize};

use super::sampler::{episode_seed, sample_episode, EpisodeSpec};
use crate::descriptors::Dataset;
use crate::diffmath::{parameter_norms, Bound, Graph, OptimizerConfig, OptimizerState};
use crate::embedding::{apply_bn_observations, Mode};
use crate::error::{Error, NonFiniteDiagnostic, Result};
use crate::model::Model;
use crate::selection::{F_GAMMA, F_PSI};

const TRAIN_SALT: u64 = 0x74_7261_696e;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    /// Episode shape; its seed roots the training episode stream.
    pub episode: EpisodeSpec,
    pub optimizer: OptimizerConfig,
    /// Train `F_Γ` on the auxiliary loss for the first half of the epochs,
    /// then `F_Ψ` on the episode loss with `F_Γ` frozen.
    #[serde(default)]
    pub two_phase: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.episode.validate()?;
        self.optimizer.validate()?;
        if self.episodes_per_epoch == 0 && self.epochs > 0 {
            return Err(Error::invalid("episodes_per_epoch must be ≥ 1"));
        }
        Ok(())
    }

    /// Number of leading epochs spent in the support-only phase.
    pub fn first_phase_epochs(&self) -> usize {
        if self.two_phase {
            self.epochs.div_ceil(2)
        } else {
            0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub episode: usize,
    pub loss: f64,
}

/// Episodic training; returns the loss of every episode in order.
///
/// Aborts with [`Error::NonFiniteLoss`] on the first non-finite loss, leaving
/// the model as it was after the previous step.
pub fn train(model: &mut Model, dataset: &Dataset, cfg: &TrainConfig) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let mut opt = OptimizerState::new(cfg.optimizer.clone());
    let mut curve = Vec::with_capacity(cfg.epochs * cfg.episodes_per_epoch);
    let first_phase = cfg.first_phase_epochs();
    let aux_weight = model.config.aux_weight;
    let mut g = Graph::new();
    for epoch in 0..cfg.epochs {
        opt.set_epoch(epoch);
        for ep in 0..cfg.episodes_per_epoch {
            let seed = episode_seed(cfg.episode.seed, TRAIN_SALT, (epoch * cfg.episodes_per_epoch + ep) as u64);
            let episode = sample_episode(dataset, &cfg.episode.with_seed(seed))?;
            g.reset();
            let support_phase = epoch < first_phase;
            let frozen = |n: &str| match (cfg.two_phase, support_phase) {
                (false, _) => false,
                (true, true) => n.starts_with(F_PSI),
                (true, false) => n.starts_with(F_GAMMA),
            };
            let bound = Bound::with_frozen(&mut g, &model.params, frozen);
            let mut observations = Vec::new();
            let fwd = model.forward(&mut g, &bound, &episode, Mode::Train, &mut observations)?;
            let loss = if support_phase {
                match fwd.aux_loss {
                    Some(aux) => aux,
                    None => {
                        return Err(Error::invalid(
                            "two-phase training needs support selection enabled",
                        ))
                    }
                }
            } else if cfg.two_phase {
                fwd.episode_loss
            } else {
                fwd.total_loss(&mut g, aux_weight)
            };
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(Box::new(NonFiniteDiagnostic {
                    epoch,
                    episode: ep,
                    episode_seed: seed,
                    loss: value,
                    parameter_norms: parameter_norms(&model.params),
                })));
            }
            g.backward(loss)?;
            let mut grads = bound.gradients(&g)?;
            // Frozen parameters must not move, not even under Adam momentum.
            grads.retain(|n, _| !frozen(n));
            opt.step(&mut model.params, &grads)?;
            apply_bn_observations(&mut model.buffers, &observations)?;
            curve.push(LossRecord {
                epoch,
                episode: ep,
                loss: value,
            });
        }
    }
    Ok(curve)
}
