//! Run configuration: the TOML file every command reads, and the resolved
//! snapshot written next to its outputs.
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/demo"
//!
//! [data]
//! path = "data/planted"        # or a [data.synthetic] table
//!
//! [episode]
//! n_way = 5
//! k_shot = 1
//! queries_per_class = 15
//!
//! [model.selection]
//! strategy = "adaptive"        # all | fixed:<V> | top:<τ>
//! k_neighbors = 1
//!
//! [train]
//! epochs = 30
//! episodes_per_epoch = 100
//!
//! [optimizer]
//! kind = "adam"
//! learning_rate = 1e-3
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::descriptors::AggregationMode;
use crate::diffmath::OptimizerConfig;
use crate::embedding::{BackboneKind, GridDims, TransformConfig};
use crate::episodic::{EpisodeSpec, EvalConfig, SyntheticSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::selection::SelectionModel;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory (`classes.json` plus one folder per class).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Generate the planted-cluster dataset in memory instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeShape {
    pub n_way: usize,
    pub k_shot: usize,
    pub queries_per_class: usize,
}

impl Default for EpisodeShape {
    fn default() -> Self {
        let d = EpisodeSpec::default();
        Self {
            n_way: d.n_way,
            k_shot: d.k_shot,
            queries_per_class: d.queries_per_class,
        }
    }
}

impl EpisodeShape {
    pub fn spec(&self, seed: u64) -> EpisodeSpec {
        EpisodeSpec {
            n_way: self.n_way,
            k_shot: self.k_shot,
            queries_per_class: self.queries_per_class,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub backbone: BackboneKind,
    pub transform: TransformConfig,
    pub selection: SelectionModel,
    pub aggregation: AggregationMode,
    pub aux_weight: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let d = ModelConfig::new(GridDims { h: 1, w: 1, c: 1 });
        Self {
            backbone: d.backbone,
            transform: d.transform,
            selection: d.selection,
            aggregation: d.aggregation,
            aux_weight: d.aux_weight,
        }
    }
}

impl ModelSettings {
    pub fn model_config(&self, input: GridDims) -> ModelConfig {
        ModelConfig {
            input,
            backbone: self.backbone.clone(),
            transform: self.transform.clone(),
            selection: self.selection.clone(),
            aggregation: self.aggregation,
            aux_weight: self.aux_weight,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub two_phase: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 30,
            episodes_per_epoch: 100,
            two_phase: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub n_episodes: usize,
    pub workers: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_episodes: 600,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream; there is no entropy-based default.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub episode: EpisodeShape,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub train: TrainSettings,
    /// Adam with a ×0.1 step every 10 epochs when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            output_dir: None,
            data: DataConfig::default(),
            episode: EpisodeShape::default(),
            model: ModelSettings::default(),
            train: TrainSettings::default(),
            optimizer: None,
            eval: EvalSettings::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Format(m) => Error::format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to TOML")
    }

    /// Fills in every default so the snapshot alone reproduces the run.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.optimizer = Some(self.optimizer());
        out
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        self.optimizer
            .clone()
            .unwrap_or_else(|| OptimizerConfig::default_adam(self.train.epochs))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.path.is_some() && self.data.synthetic.is_some() {
            return Err(Error::invalid("data: give either `path` or `synthetic`, not both"));
        }
        if let Some(s) = &self.data.synthetic {
            s.validate()?;
        }
        self.episode.spec(self.seed).validate()?;
        self.model.transform.validate()?;
        self.model.selection.validate()?;
        if !(self.model.aux_weight >= 0.0 && self.model.aux_weight.is_finite()) {
            return Err(Error::invalid("model.aux_weight must be finite and ≥ 0"));
        }
        self.optimizer().validate()?;
        if self.eval.n_episodes == 0 {
            return Err(Error::invalid("eval.n_episodes must be ≥ 1"));
        }
        if self.eval.workers == 0 {
            return Err(Error::invalid("eval.workers must be ≥ 1"));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            episodes_per_epoch: self.train.episodes_per_epoch,
            episode: self.episode.spec(self.seed),
            optimizer: self.optimizer(),
            two_phase: self.train.two_phase,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            episode: self.episode.spec(self.seed),
            n_episodes: self.eval.n_episodes,
            workers: self.eval.workers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::Strategy;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse("seed = 3\n[data]\npath = \"d\"\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.episode, EpisodeShape::default());
        assert_eq!(cfg.model.selection.lambda1, 10.0);
        assert_eq!(cfg.optimizer().lr_at(10), 1e-4);
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(RunConfig::parse("[data]\npath = \"d\"\n").is_err());
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "seed = 1\n[data]\npath = \"a\"\n[data.synthetic]\nclasses = 2\ndim = 2\nheight = 2\nwidth = 2\nsignal_fraction = 0.5\ncluster_separation = 1.0\nnoise_scale = 1.0\nseed = 0\n",
            "seed = 1\n[episode]\nn_way = 1\n",
            "seed = 1\n[model.selection]\nstrategy = \"top:0\"\n",
            "seed = 1\n[model.selection]\nlambda1 = -2.0\n",
            "seed = 1\nbogus = 2\n",
            "seed = 1\n[eval]\nworkers = 0\n",
        ] {
            assert!(RunConfig::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let mut cfg = RunConfig::new(11);
        cfg.data.synthetic = Some(SyntheticSpec::default());
        cfg.model.selection.strategy = Strategy::FixedThreshold(0.3);
        cfg.model.backbone = BackboneKind::PatchLinear { patch: 2, out_dim: 8 };
        cfg.train.epochs = 12;
        let snap = cfg.resolved();
        let text = snap.to_toml();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.optimizer.unwrap().schedule.len(), 1);
        assert!(text.contains("strategy = \"fixed:0.3\""));
    }
}
