use ndarray::Array2;

use super::{top_k, AttentionMap, SelectionModel, Strategy, SupportStage, F_PSI};
use crate::diffmath::{argmax, Bound, Graph, NodeId};
use crate::embedding::layers::threshold_mlp;
use crate::error::{Error, Result};

/// Nodes and hard decisions of the query stage for one episode.
#[derive(Clone, Debug)]
pub struct QueryStage {
    /// `γ^q` per query descriptor, `|Q|·m × N`.
    pub gamma: NodeId,
    /// `R^q`, `|Q|·m × 1`.
    pub scores: NodeId,
    /// `V*` under the adaptive strategy.
    pub thresholds: Option<NodeId>,
    /// Descriptor weights: `M_q` (adaptive) or a constant 0/1 mask; absent
    /// when every descriptor counts fully.
    pub weights: Option<NodeId>,
    /// Argmax class of each query descriptor's `γ^q`.
    pub argmax_class: Vec<usize>,
    /// Per query descriptor, per class: chosen rows of `S*_c`.
    pub neighbors: Vec<Vec<Vec<usize>>>,
    /// Image-to-class scores, `|Q| × N`.
    pub class_scores: NodeId,
}

impl QueryStage {
    pub fn attention(&self, g: &Graph) -> AttentionMap {
        let n = g.value(self.scores).nrows();
        let col = |id: Option<NodeId>, fill: f64| match id {
            Some(id) => g.value(id).column(0).to_vec(),
            None => vec![fill; n],
        };
        AttentionMap {
            gates: col(self.weights, 1.0),
            thresholds: col(self.thresholds, 0.0),
            scores: g.value(self.scores).column(0).to_vec(),
        }
    }
}

/// Scores transformed query descriptors (`n_images·m` rows, image-major)
/// against the retained support subset and sums them into class scores.
pub fn query_stage(
    g: &mut Graph,
    bound: &Bound,
    cfg: &SelectionModel,
    queries: NodeId,
    n_images: usize,
    support: &SupportStage,
) -> Result<QueryStage> {
    let m = support.layout.m;
    let n = support.layout.n_way;
    let p = support.layout.rows_per_class();
    let rows = g.value(queries).nrows();
    if rows != n_images * m || n_images == 0 {
        return Err(Error::invalid(format!(
            "query batch has {rows} rows, expected {n_images} images of {m}"
        )));
    }
    let class_rows = &support.subset.class_rows;
    if class_rows.iter().any(Vec::is_empty) {
        return Err(Error::contract("query stage needs a nonempty subset for every class"));
    }
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    let mut retained = Vec::new();
    for (c, r) in class_rows.iter().enumerate() {
        retained.extend(r.iter().map(|&i| c * p + i));
        offsets.push(retained.len());
    }
    let subset = g.gather_rows(support.pools, &retained);
    let qn = g.normalize_rows(queries, cfg.zero_norm)?;
    let sn = g.normalize_rows(subset, cfg.zero_norm)?;
    let sims = g.matmul_nt(qn, sn);

    let mut picks = Vec::with_capacity(rows * n);
    let mut neighbors = Vec::with_capacity(rows);
    {
        let s = g.value(sims);
        for row in 0..rows {
            let mut per_class = Vec::with_capacity(n);
            for c in 0..n {
                let chosen = top_k(|j| s[[row, j]], offsets[c]..offsets[c + 1], cfg.k_neighbors, None);
                per_class.push(chosen.iter().map(|j| class_rows[c][j - offsets[c]]).collect());
                picks.push(chosen);
            }
            neighbors.push(per_class);
        }
    }
    let gamma = g.select_sum(sims, n, picks);
    let argmax_class: Vec<usize> = g
        .value(gamma)
        .rows()
        .into_iter()
        .map(|r| argmax(r.iter().copied()).0)
        .collect();
    let probs = g.softmax_rows(gamma);
    let (scores, _) = g.max_with_index(probs);

    let mut thresholds = None;
    let weights = if !cfg.enable_query_selection {
        None
    } else {
        match cfg.strategy {
            Strategy::All => None,
            Strategy::Adaptive => {
                let class_means = g.sparse_rows(
                    subset,
                    (0..n)
                        .map(|c| {
                            let w = 1.0 / (offsets[c + 1] - offsets[c]) as f64;
                            (offsets[c]..offsets[c + 1]).map(|j| (j, w)).collect()
                        })
                        .collect(),
                );
                let context = g.gather_rows(class_means, &argmax_class);
                let input = g.concat_cols(queries, context);
                let logits = threshold_mlp(g, bound, F_PSI, input)?;
                let v = g.sigmoid(logits);
                thresholds = Some(v);
                let diff = g.sub(scores, v);
                let z = g.scale(diff, cfg.lambda2);
                Some(g.sigmoid(z))
            }
            Strategy::FixedThreshold(threshold) => {
                let mask = g.value(scores).mapv(|r| if r >= threshold { 1.0 } else { 0.0 });
                Some(g.constant(mask))
            }
            Strategy::TopTau(tau) => {
                let r = g.value(scores);
                let mut mask = Array2::zeros((rows, 1));
                for img in 0..n_images {
                    for j in top_k(|j| r[[j, 0]], img * m..(img + 1) * m, tau, None) {
                        mask[[j, 0]] = 1.0;
                    }
                }
                Some(g.constant(mask))
            }
        }
    };

    let weighted = match weights {
        Some(w) => g.mul_col(gamma, w),
        None => gamma,
    };
    let segments = (0..n_images)
        .map(|img| (img * m..(img + 1) * m).map(|j| (j, 1.0)).collect())
        .collect();
    let class_scores = g.sparse_rows(weighted, segments);

    Ok(QueryStage {
        gamma,
        scores,
        thresholds,
        weights,
        argmax_class,
        neighbors,
        class_scores,
    })
}
