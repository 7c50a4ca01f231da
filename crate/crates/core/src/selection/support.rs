use ndarray::Array2;

use super::{top_k, AttentionMap, SelectionModel, SupportContext, SupportSubset, F_GAMMA};
use crate::descriptors::{pool_weights, AggregationMode};
use crate::diffmath::{Bound, Graph, NodeId};
use crate::embedding::layers::threshold_mlp;
use crate::error::{Error, Result};

/// Shape of the stacked class pools built from a class-major support batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolLayout {
    pub n_way: usize,
    pub k_shot: usize,
    /// Descriptors per image.
    pub m: usize,
    pub mode: AggregationMode,
}

impl PoolLayout {
    pub fn rows_per_class(&self) -> usize {
        match self.mode {
            AggregationMode::Union => self.k_shot * self.m,
            AggregationMode::Mean => self.m,
        }
    }

    pub fn total_rows(&self) -> usize {
        self.n_way * self.rows_per_class()
    }

    /// Spatial index of pool row `local` inside its class.
    pub fn spatial_index(&self, local: usize) -> usize {
        local % self.m
    }

    /// Weights mapping the stacked support batch (`N·K·m` rows) to the
    /// stacked pools.
    pub fn stacking_weights(&self) -> Vec<Vec<(usize, f64)>> {
        let per = pool_weights(self.k_shot, self.m, self.mode);
        let shift = self.k_shot * self.m;
        (0..self.n_way)
            .flat_map(|c| {
                per.iter()
                    .map(move |terms| terms.iter().map(|&(s, w)| (c * shift + s, w)).collect())
            })
            .collect()
    }

    /// Pool rows that make up each scored support "image": one group per shot
    /// in union mode, one per class in mean mode. Paired with class labels.
    pub fn image_groups(&self) -> (Vec<Vec<usize>>, Vec<usize>) {
        let p = self.rows_per_class();
        let per_class = p / self.m;
        let mut groups = Vec::new();
        let mut labels = Vec::new();
        for c in 0..self.n_way {
            for s in 0..per_class {
                groups.push((0..self.m).map(|i| c * p + s * self.m + i).collect());
                labels.push(c);
            }
        }
        (groups, labels)
    }

    pub(crate) fn context_weights(&self, context: SupportContext) -> Vec<Vec<(usize, f64)>> {
        let p = self.rows_per_class();
        let mut out = Vec::with_capacity(self.total_rows());
        for c in 0..self.n_way {
            for local in 0..p {
                let i = self.spatial_index(local);
                let rows: Vec<usize> = (0..self.n_way)
                    .filter(|&o| o != c)
                    .flat_map(|o| {
                        (0..p)
                            .filter(move |&r| context == SupportContext::AllOther || self.spatial_index(r) == i)
                            .map(move |r| o * p + r)
                    })
                    .collect();
                let w = if rows.is_empty() { 0.0 } else { 1.0 / rows.len() as f64 };
                out.push(rows.into_iter().map(|r| (r, w)).collect());
            }
        }
        out
    }
}

/// Nodes and hard decisions of the support stage for one episode.
#[derive(Clone, Debug)]
pub struct SupportStage {
    pub layout: PoolLayout,
    /// Stacked class pools, `N·p × d`.
    pub pools: NodeId,
    /// Class similarities `γ`, `N·p × N`.
    pub gamma: NodeId,
    /// Discriminative scores `R`, `N·p × 1`.
    pub scores: NodeId,
    /// `V*` and `M_s`; absent when support selection is disabled.
    pub thresholds: Option<NodeId>,
    pub gates: Option<NodeId>,
    /// Per pool row, per class: the chosen neighbour rows (local indices).
    pub neighbors: Vec<Vec<Vec<usize>>>,
    pub subset: SupportSubset,
}

impl SupportStage {
    /// Attention map over every pool row; gates read 1 when selection is off.
    pub fn attention(&self, g: &Graph) -> AttentionMap {
        let n = self.layout.total_rows();
        let col = |id: Option<NodeId>, fill: f64| match id {
            Some(id) => g.value(id).column(0).to_vec(),
            None => vec![fill; n],
        };
        AttentionMap {
            gates: col(self.gates, 1.0),
            thresholds: col(self.thresholds, 0.0),
            scores: g.value(self.scores).column(0).to_vec(),
        }
    }
}

/// Builds pools from transformed support descriptors (class-major, `N·K·m`
/// rows), scores every pool row and materializes `S*`.
pub fn support_stage(
    g: &mut Graph,
    bound: &Bound,
    cfg: &SelectionModel,
    support: NodeId,
    layout: PoolLayout,
) -> Result<SupportStage> {
    let expected = layout.n_way * layout.k_shot * layout.m;
    if g.value(support).nrows() != expected {
        return Err(Error::invalid(format!(
            "support batch has {} rows, layout expects {expected}",
            g.value(support).nrows()
        )));
    }
    let n = layout.n_way;
    let p = layout.rows_per_class();
    let pools = g.sparse_rows(support, layout.stacking_weights());
    let normed = g.normalize_rows(pools, cfg.zero_norm)?;
    let sims = g.matmul_nt(normed, normed);

    let mut picks = Vec::with_capacity(n * p * n);
    let mut neighbors = Vec::with_capacity(n * p);
    {
        let s = g.value(sims);
        for row in 0..n * p {
            let own = row / p;
            let mut per_class = Vec::with_capacity(n);
            for c in 0..n {
                let exclude = (c == own).then_some(row);
                let chosen = top_k(|j| s[[row, j]], c * p..(c + 1) * p, cfg.k_neighbors, exclude);
                per_class.push(chosen.iter().map(|j| j - c * p).collect());
                picks.push(chosen);
            }
            neighbors.push(per_class);
        }
    }
    let gamma = g.select_sum(sims, n, picks);
    let probs = g.softmax_rows(gamma);
    let (scores, _) = g.max_with_index(probs);

    let (thresholds, gates) = if cfg.enable_support_selection {
        let context = g.sparse_rows(pools, layout.context_weights(cfg.support_context));
        let input = g.concat_cols(pools, context);
        let logits = threshold_mlp(g, bound, F_GAMMA, input)?;
        let v = g.sigmoid(logits);
        let diff = g.sub(scores, v);
        let z = g.scale(diff, cfg.lambda1);
        (Some(v), Some(g.sigmoid(z)))
    } else {
        (None, None)
    };

    let class_rows: Vec<Vec<usize>> = (0..n)
        .map(|c| match gates {
            None => (0..p).collect(),
            Some(m) => {
                let m = g.value(m);
                let kept: Vec<usize> = (0..p).filter(|&r| m[[c * p + r, 0]] >= 0.5).collect();
                if kept.is_empty() {
                    top_k(|r| m[[c * p + r, 0]], 0..p, 1, None)
                } else {
                    kept
                }
            }
        })
        .collect();
    let pv = g.value(pools);
    let descriptors = class_rows
        .iter()
        .enumerate()
        .map(|(c, rows)| {
            let mut out = Array2::zeros((rows.len(), pv.ncols()));
            for (dst, &r) in rows.iter().enumerate() {
                out.row_mut(dst).assign(&pv.row(c * p + r));
            }
            out
        })
        .collect();

    Ok(SupportStage {
        layout,
        pools,
        gamma,
        scores,
        thresholds,
        gates,
        neighbors,
        subset: SupportSubset {
            class_rows,
            descriptors,
        },
    })
}
