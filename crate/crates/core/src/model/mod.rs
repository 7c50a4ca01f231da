//! The full episode pipeline: backbone, transform, selection and scoring over
//! one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptors::{AggregationMode, Episode};
use crate::diffmath::{Bound, Graph, Matrix, NodeId, ParamStore};
use crate::embedding::layers::init_threshold_mlp;
use crate::embedding::{Backbone, BackboneKind, BnObservation, GridDims, Mode, TransformConfig};
use crate::error::{Error, Result};
use crate::scoring::{episode_loss_node, episode_score, support_auxiliary_loss, EpisodeScores};
use crate::selection::{query_stage, support_stage, PoolLayout, QueryStage, SelectionModel, SupportStage, F_GAMMA, F_PSI};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Raw input grid every sample must have.
    pub input: GridDims,
    #[serde(default)]
    pub backbone: BackboneKind,
    #[serde(default)]
    pub transform: TransformConfig,
    #[serde(default)]
    pub selection: SelectionModel,
    #[serde(default)]
    pub aggregation: AggregationMode,
    /// Weight of the support auxiliary loss in the training objective.
    #[serde(default = "default_aux_weight")]
    pub aux_weight: f64,
}

fn default_aux_weight() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn new(input: GridDims) -> Self {
        Self {
            input,
            backbone: BackboneKind::Identity,
            transform: TransformConfig::default(),
            selection: SelectionModel::default(),
            aggregation: AggregationMode::Union,
            aux_weight: default_aux_weight(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        Backbone::new(self.backbone.clone(), self.input)?;
        self.transform.validate()?;
        self.selection.validate()?;
        if !(self.aux_weight >= 0.0 && self.aux_weight.is_finite()) {
            return Err(Error::invalid("aux_weight must be finite and ≥ 0"));
        }
        Ok(())
    }

    /// Dimension of the descriptors the selection stages see.
    pub fn descriptor_dim(&self) -> Result<usize> {
        let b = Backbone::new(self.backbone.clone(), self.input)?;
        Ok(self.transform.output_dim(b.output_dims().c))
    }
}

/// Graph nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct EpisodeForward {
    pub support: SupportStage,
    pub query: QueryStage,
    pub episode_loss: NodeId,
    pub aux_loss: Option<NodeId>,
}

impl EpisodeForward {
    /// `episode_loss + w·aux_loss`; the auxiliary term is dropped when `w = 0`
    /// so the total equals the episode loss exactly.
    pub fn total_loss(&self, g: &mut Graph, aux_weight: f64) -> NodeId {
        match self.aux_loss {
            Some(aux) if aux_weight != 0.0 => {
                let weighted = g.scale(aux, aux_weight);
                g.add(self.episode_loss, weighted)
            }
            _ => self.episode_loss,
        }
    }
}

/// Retention statistics of one episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    /// Fraction of pool rows in `S*`.
    pub support_retained: f64,
    /// Fraction of query descriptors whose weight is ≥ 0.5.
    pub query_retained: f64,
}

/// Evaluation-mode result of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub scores: EpisodeScores,
    pub accuracy: f64,
    pub loss: f64,
    pub stats: SelectionStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Non-trainable state (batch-norm running statistics).
    pub buffers: ParamStore,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new(config.backbone.clone(), config.input)?;
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        backbone.init(&mut params, &mut buffers, &mut rng);
        let c = backbone.output_dims().c;
        config.transform.init(&mut params, &mut buffers, &mut rng, c);
        let d = config.transform.output_dim(c);
        let t = config.selection.threshold_init;
        init_threshold_mlp(&mut params, &mut rng, F_GAMMA, 2 * d, d, t);
        init_threshold_mlp(&mut params, &mut rng, F_PSI, 2 * d, d, t);
        Ok(Self { config, params, buffers })
    }

    pub fn backbone(&self) -> Backbone {
        Backbone::new(self.config.backbone.clone(), self.config.input).expect("validated at init")
    }

    /// Checks that the stored tensors have the shapes a fresh model would.
    pub fn validate(&self) -> Result<()> {
        let fresh = Model::init(self.config.clone(), 0)?;
        for (which, have, want) in [("parameter", &self.params, &fresh.params), ("buffer", &self.buffers, &fresh.buffers)] {
            if have.len() != want.len() || have.keys().ne(want.keys()) {
                return Err(Error::format(format!("{which} names do not match the configuration")));
            }
            for (k, v) in have {
                if v.dim() != want[k].dim() {
                    return Err(Error::format(format!(
                        "{which} {k} has shape {:?}, configuration needs {:?}",
                        v.dim(),
                        want[k].dim()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::format(format!("{which} {k} holds non-finite values")));
                }
            }
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound::all(g, &self.params)
    }

    /// Records the episode pipeline into `g` using parameters bound in `bound`.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        episode: &Episode,
        mode: Mode,
        observations: &mut Vec<BnObservation>,
    ) -> Result<EpisodeForward> {
        let (h, w, c) = episode.input_dims();
        let input = self.config.input;
        if (h, w, c) != (input.h, input.w, input.c) {
            return Err(Error::invalid(format!(
                "episode grids are {h}x{w}x{c}, model expects {input}"
            )));
        }
        let backbone = self.backbone();
        let n_support = episode.support().len();
        let n_query = episode.queries().len();
        if n_query == 0 {
            return Err(Error::invalid("episode has no queries"));
        }
        let cells = input.cells();
        let mut raw = Matrix::zeros(((n_support + n_query) * cells, c));
        for (i, s) in episode.support().iter().chain(episode.queries()).enumerate() {
            raw.slice_mut(ndarray::s![i * cells..(i + 1) * cells, ..])
                .assign(s.set.descriptors());
        }
        let x = g.constant(raw);
        let t = backbone.embed_batch(g, bound, &self.buffers, x, n_support + n_query, mode, observations)?;
        let t = self.config.transform.apply(g, bound, &self.buffers, t, mode, observations)?;
        let m = backbone.output_dims().cells();
        let support_rows: Vec<usize> = (0..n_support * m).collect();
        let query_rows: Vec<usize> = (n_support * m..(n_support + n_query) * m).collect();
        let s = g.gather_rows(t, &support_rows);
        let q = g.gather_rows(t, &query_rows);
        let layout = PoolLayout {
            n_way: episode.n_way(),
            k_shot: episode.k_shot(),
            m,
            mode: self.config.aggregation,
        };
        let sel = &self.config.selection;
        let support = support_stage(g, bound, sel, s, layout)?;
        let query = query_stage(g, bound, sel, q, n_query, &support)?;
        let episode_loss = episode_loss_node(g, &query, &episode.query_labels())?;
        let aux_loss = support_auxiliary_loss(g, &support);
        Ok(EpisodeForward {
            support,
            query,
            episode_loss,
            aux_loss,
        })
    }

    /// Evaluation-mode pass: scores, accuracy and retention statistics.
    pub fn evaluate_episode(&self, episode: &Episode) -> Result<EpisodeOutcome> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let fwd = self.forward(&mut g, &bound, episode, Mode::Eval, &mut Vec::new())?;
        let scores = episode_score(&g, &fwd.query);
        let labels = episode.query_labels();
        let accuracy = scores.accuracy(&labels);
        let stats = selection_stats(&g, &fwd);
        Ok(EpisodeOutcome {
            accuracy,
            loss: g.scalar(fwd.episode_loss),
            scores,
            stats,
        })
    }
}

pub fn selection_stats(g: &Graph, fwd: &EpisodeForward) -> SelectionStats {
    let total = fwd.support.layout.total_rows();
    let query = fwd.query.attention(g);
    SelectionStats {
        support_retained: fwd.support.subset.total() as f64 / total as f64,
        query_retained: query.retained() as f64 / query.len().max(1) as f64,
    }
}

#[cfg(test)]
mod tests;

/// Finite-difference check of the whole pipeline on a 2-way 1-shot toy
/// episode: patch-linear backbone, random transform, both threshold
/// networks. Every parameter is jittered first so none of the
/// zero-initialized layers has an identically vanishing gradient.
pub fn pipeline_gradient_check(
    selection: &SelectionModel,
    seed: u64,
    options: &crate::diffmath::GradCheckOptions,
) -> Result<crate::diffmath::GradCheckReport> {
    use rand::Rng;
    use std::sync::Arc;

    let grid = GridDims { h: 4, w: 4, c: 2 };
    let mut cfg = ModelConfig::new(grid);
    cfg.backbone = BackboneKind::PatchLinear { patch: 2, out_dim: 3 };
    cfg.transform.init = crate::embedding::TransformInit::Random;
    cfg.selection = selection.clone();
    let mut model = Model::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9c4e);
    for v in model.params.values_mut() {
        v.mapv_inplace(|x| x + rng.random_range(-0.3..0.3));
    }
    let mut sample = |class| -> Result<crate::descriptors::LabeledSample> {
        let m = Matrix::from_shape_fn((grid.cells(), grid.c), |_| rng.random_range(-1.0..1.0));
        let set = crate::descriptors::DescriptorSet::new(m, grid.h, grid.w)?;
        Ok(crate::descriptors::LabeledSample::new(Arc::new(set), class))
    };
    let support = vec![sample(0)?, sample(1)?];
    let queries = vec![sample(0)?, sample(1)?, sample(0)?, sample(1)?];
    let episode = Episode::new(2, 1, support, queries)?;
    crate::diffmath::gradient_check(
        |g, b| {
            let fwd = model.forward(g, b, &episode, Mode::Train, &mut Vec::new())?;
            Ok(fwd.total_loss(g, model.config.aux_weight))
        },
        &model.params,
        options,
    )
}
