//! Adam and momentum SGD with a piecewise-constant learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::Matrix;
use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { momentum: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// From `epoch` on, the learning rate is multiplied by `multiplier`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Milestone {
    pub epoch: usize,
    pub multiplier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub schedule: Vec<Milestone>,
}

impl OptimizerConfig {
    /// Adam at 1e-3, decayed by 0.1 every 10 epochs.
    pub fn default_adam(epochs: usize) -> Self {
        Self {
            kind: OptimizerKind::adam(),
            learning_rate: 1e-3,
            schedule: step_decay(10, 0.1, epochs),
        }
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|m| m.epoch <= epoch)
            .fold(self.learning_rate, |lr, m| lr * m.multiplier)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.schedule.iter().any(|m| !(m.multiplier.is_finite() && m.multiplier >= 0.0)) {
            return Err(Error::invalid("schedule multipliers must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Milestones at `every, 2·every, …` strictly below `epochs`.
pub fn step_decay(every: usize, factor: f64, epochs: usize) -> Vec<Milestone> {
    if every == 0 {
        return Vec::new();
    }
    (1..)
        .map(|i| i * every)
        .take_while(|&e| e < epochs)
        .map(|epoch| Milestone {
            epoch,
            multiplier: factor,
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    epoch: usize,
    steps: u64,
    first: BTreeMap<String, Matrix>,
    second: BTreeMap<String, Matrix>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            epoch: 0,
            steps: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn effective_lr(&self) -> f64 {
        self.config.lr_at(self.epoch)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter that has a gradient in `grads`.
    ///
    /// Parameters absent from `grads` are left alone (frozen). An empty
    /// gradient set means backward never ran and is rejected.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.is_empty() {
            return Err(Error::contract("optimizer step without gradients"));
        }
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::contract(format!("gradient for unknown parameter `{name}`")))?;
            if p.dim() != g.dim() {
                return Err(Error::contract(format!(
                    "gradient shape {:?} does not match parameter `{name}` {:?}",
                    g.dim(),
                    p.dim()
                )));
            }
        }
        self.steps += 1;
        let lr = self.effective_lr();
        let t = self.steps as i32;
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            match self.config.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let m = self
                        .first
                        .entry(name.clone())
                        .or_insert_with(|| Matrix::zeros(g.dim()));
                    m.zip_mut_with(g, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
                    let v = self
                        .second
                        .entry(name.clone())
                        .or_insert_with(|| Matrix::zeros(g.dim()));
                    v.zip_mut_with(g, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                        let mhat = m / bc1;
                        let vhat = v / bc2;
                        *p -= lr * mhat / (vhat.sqrt() + eps);
                    });
                }
                OptimizerKind::SgdMomentum { momentum } => {
                    let vel = self
                        .first
                        .entry(name.clone())
                        .or_insert_with(|| Matrix::zeros(g.dim()));
                    vel.zip_mut_with(g, |v, &g| *v = momentum * *v + g);
                    p.zip_mut_with(&*vel, |p, &v| *p -= lr * v);
                }
            }
        }
        Ok(())
    }
}
