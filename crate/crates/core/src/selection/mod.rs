//! Support-descriptor selection, query-descriptor gating and the baseline
//! query strategies.
//!
//! Every support descriptor is scored by how strongly its nearest neighbours
//! point at a single class (`R`), compared against a learned per-descriptor
//! threshold `V*`, and gated by `sigmoid(λ(R − V*))`. Support descriptors with
//! gate ≥ 0.5 form the retained subset `S*`; query descriptors are scored
//! against `S*` and weighted by their own gate.

mod knn;
mod query;
mod support;

use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use knn::{knn, top_k, Neighbor};
pub use query::{query_stage, QueryStage};
pub use support::{support_stage, PoolLayout, SupportStage};

use crate::descriptors::ClassPool;
use crate::diffmath::{sigmoid, Bound, Graph, ParamStore, ZeroNorm};
use crate::embedding::layers::threshold_mlp;
use crate::error::{Error, Result};

pub const F_GAMMA: &str = "f_gamma";
pub const F_PSI: &str = "f_psi";

/// How query descriptors are weighted before summing class similarities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    /// Learned threshold per descriptor, soft gate.
    Adaptive,
    /// Every descriptor counts with weight 1.
    All,
    /// Weight 1 when `R ≥ V`, else 0.
    FixedThreshold(f64),
    /// Weight 1 for the τ highest-`R` descriptors of each query image.
    TopTau(usize),
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Adaptive => f.write_str("adaptive"),
            Strategy::All => f.write_str("all"),
            Strategy::FixedThreshold(v) => write!(f, "fixed:{v}"),
            Strategy::TopTau(t) => write!(f, "top:{t}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unknown strategy `{s}` (adaptive, all, fixed:<V>, top:<τ>)"));
        match s {
            "adaptive" => Ok(Strategy::Adaptive),
            "all" => Ok(Strategy::All),
            _ => {
                let (head, arg) = s.split_once(':').ok_or_else(bad)?;
                match head {
                    "fixed" => {
                        let v: f64 = arg.parse().map_err(|_| bad())?;
                        if !v.is_finite() {
                            return Err(bad());
                        }
                        Ok(Strategy::FixedThreshold(v))
                    }
                    "top" => {
                        let t: usize = arg.parse().map_err(|_| bad())?;
                        if t == 0 {
                            return Err(Error::invalid("top-τ strategy needs τ ≥ 1"));
                        }
                        Ok(Strategy::TopTau(t))
                    }
                    _ => Err(bad()),
                }
            }
        }
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

/// Which support descriptors feed the context half of the `F_Γ` input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportContext {
    /// Mean of the same-spatial-index descriptors of every other class.
    #[default]
    SameIndex,
    /// Mean of every descriptor of every other class.
    AllOther,
}

/// Hyperparameters of the selection stages. The `F_Γ` / `F_Ψ` weights live in
/// the model's parameter store under [`F_GAMMA`] and [`F_PSI`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionModel {
    pub lambda1: f64,
    pub lambda2: f64,
    pub k_neighbors: usize,
    pub strategy: Strategy,
    pub enable_support_selection: bool,
    pub enable_query_selection: bool,
    /// Threshold both networks output at initialization.
    pub threshold_init: f64,
    pub support_context: SupportContext,
    pub zero_norm: ZeroNorm,
}

impl Default for SelectionModel {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 10.0,
            k_neighbors: 1,
            strategy: Strategy::Adaptive,
            enable_support_selection: true,
            enable_query_selection: true,
            threshold_init: 0.2,
            support_context: SupportContext::SameIndex,
            zero_norm: ZeroNorm::Lenient,
        }
    }
}

impl SelectionModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.k_neighbors == 0 {
            return Err(Error::invalid("k_neighbors must be ≥ 1"));
        }
        if !(self.threshold_init > 0.0 && self.threshold_init < 1.0) {
            return Err(Error::invalid("threshold_init must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Whether query descriptors are weighted at all.
    pub fn weights_queries(&self) -> bool {
        self.enable_query_selection && self.strategy != Strategy::All
    }

    /// Whether `F_Ψ` participates in the forward pass.
    pub fn uses_query_network(&self) -> bool {
        self.enable_query_selection && self.strategy == Strategy::Adaptive
    }
}

/// Per-descriptor gate values with the scores and thresholds behind them.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AttentionMap {
    pub gates: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub scores: Vec<f64>,
}

impl AttentionMap {
    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn retained(&self) -> usize {
        self.gates.iter().filter(|&&m| m >= 0.5).count()
    }
}

/// The retained support descriptors of every class.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportSubset {
    /// Row indices into each class pool, ascending.
    pub class_rows: Vec<Vec<usize>>,
    /// The retained descriptors themselves (transformed space).
    pub descriptors: Vec<Array2<f64>>,
}

impl SupportSubset {
    pub fn total(&self) -> usize {
        self.class_rows.iter().map(Vec::len).sum()
    }
}

/// Class similarities `γ` of support descriptor `row` of class `own_class`:
/// for each class, the sum of cosine similarities to its `k` nearest pool rows,
/// never counting the descriptor itself.
///
/// When the own pool holds nothing but the descriptor itself, its own-class
/// similarity is the empty sum, 0.
pub fn support_class_similarity(
    x: &[f64],
    own_class: usize,
    own_row: usize,
    pools: &[ClassPool],
    k: usize,
    zero: ZeroNorm,
) -> Result<Vec<f64>> {
    pools
        .iter()
        .enumerate()
        .map(|(c, pool)| {
            if pool.pool.nrows() == 0 {
                return Err(Error::invalid(format!("class {c} has an empty pool")));
            }
            let exclude = (c == own_class).then_some(own_row);
            if exclude.is_some() && pool.pool.nrows() == 1 {
                return Ok(0.0);
            }
            Ok(knn(x, pool.pool.view(), k, exclude, zero)?
                .iter()
                .map(|n| n.similarity)
                .sum())
        })
        .collect()
}

/// `R = max_c softmax(γ)_c`.
pub fn discriminative_score(gamma: &[f64]) -> f64 {
    let max = gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = gamma.iter().map(|g| (g - max).exp()).sum();
    1.0 / z
}

/// `1 / (1 + exp(−λ (R − V*)))`.
pub fn gate(r: f64, threshold: f64, lambda: f64) -> f64 {
    sigmoid(lambda * (r - threshold))
}

/// `V* = sigmoid(F(concat(x, context)))` for one descriptor, using the
/// threshold network stored under `prefix`.
pub fn predict_threshold(params: &ParamStore, prefix: &str, x: &[f64], context: &[f64]) -> Result<f64> {
    let key = format!("{prefix}.fc1.weight");
    let w = params
        .get(&key)
        .ok_or_else(|| Error::contract(format!("missing parameter {key}")))?;
    if x.len() != context.len() || w.nrows() != x.len() + context.len() {
        return Err(Error::invalid(format!(
            "threshold network takes {} inputs, got {} + {}",
            w.nrows(),
            x.len(),
            context.len()
        )));
    }
    let mut g = Graph::new();
    let bound = Bound::all(&mut g, params);
    let input = Array2::from_shape_vec((1, x.len() * 2), x.iter().chain(context).copied().collect())
        .expect("length matches");
    let input = g.constant(input);
    let logit = threshold_mlp(&mut g, &bound, prefix, input)?;
    let v = g.sigmoid(logit);
    Ok(g.scalar(v))
}

/// `V*` for a support descriptor and its context vector.
pub fn support_threshold(params: &ParamStore, x: &[f64], context: &[f64]) -> Result<f64> {
    predict_threshold(params, F_GAMMA, x, context)
}
