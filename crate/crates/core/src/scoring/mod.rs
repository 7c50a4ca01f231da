//! Image-to-class scores, class posteriors and the episodic losses.

use ndarray::Array2;

use crate::diffmath::{argmax, Graph, NodeId};
use crate::error::{Error, Result};
use crate::selection::{QueryStage, SupportStage};

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeScores {
    /// `score(X_q, c)`, `|Q| × N`.
    pub per_query: Array2<f64>,
    /// Softmax of each row of `per_query`.
    pub posteriors: Array2<f64>,
    pub predicted: Vec<usize>,
}

impl EpisodeScores {
    pub fn from_scores(per_query: Array2<f64>) -> Self {
        let mut posteriors = per_query.clone();
        for mut row in posteriors.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|s| (s - max).exp());
            let z = row.sum();
            row.mapv_inplace(|p| p / z);
        }
        let predicted = per_query
            .rows()
            .into_iter()
            .map(|r| argmax(r.iter().copied()).0)
            .collect();
        Self {
            per_query,
            posteriors,
            predicted,
        }
    }

    /// Fraction of queries whose predicted class matches `labels`.
    pub fn accuracy(&self, labels: &[usize]) -> f64 {
        let hits = self.predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
        hits as f64 / labels.len().max(1) as f64
    }
}

/// Reads the class scores the query stage recorded.
pub fn episode_score(g: &Graph, query: &QueryStage) -> EpisodeScores {
    EpisodeScores::from_scores(g.value(query.class_scores).clone())
}

/// Mean negative log posterior of the true labels.
pub fn episode_loss(scores: &EpisodeScores, labels: &[usize]) -> Result<f64> {
    let (q, n) = scores.posteriors.dim();
    if labels.len() != q || q == 0 {
        return Err(Error::invalid(format!("{} labels for {q} queries", labels.len())));
    }
    let mut total = 0.0;
    for (row, &y) in scores.per_query.rows().into_iter().zip(labels) {
        if y >= n {
            return Err(Error::invalid(format!("label {y} outside {n} classes")));
        }
        // log-sum-exp rather than log(posterior) so saturated scores stay finite.
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / q as f64)
}

/// Cross-entropy node over the query stage's class scores.
pub fn episode_loss_node(g: &mut Graph, query: &QueryStage, labels: &[usize]) -> Result<NodeId> {
    let (q, n) = g.value(query.class_scores).dim();
    if labels.len() != q || labels.iter().any(|&y| y >= n) {
        return Err(Error::invalid("query labels do not match the class scores"));
    }
    Ok(g.cross_entropy(query.class_scores, labels))
}

/// Cross-entropy of each support image against its own class, scoring
/// `score(X, c) = Σ γ_c · M_s` over the image's descriptors (own-class `γ`
/// keeps self-exclusion). `None` when support selection is disabled.
pub fn support_auxiliary_loss(g: &mut Graph, support: &SupportStage) -> Option<NodeId> {
    let gates = support.gates?;
    let weighted = g.mul_col(support.gamma, gates);
    let (groups, labels) = support.layout.image_groups();
    let rows = groups
        .into_iter()
        .map(|grp| grp.into_iter().map(|r| (r, 1.0)).collect())
        .collect();
    let scores = g.sparse_rows(weighted, rows);
    Some(g.cross_entropy(scores, &labels))
}
