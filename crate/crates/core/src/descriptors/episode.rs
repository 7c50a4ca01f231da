use std::sync::Arc;

use super::set::DescriptorSet;
use crate::error::{Error, Result};

/// Where a sample came from in its dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleRef {
    pub class: usize,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub set: Arc<DescriptorSet>,
    /// Episode-local label in `[0, N)`.
    pub class_id: usize,
    pub source: Option<SampleRef>,
}

impl LabeledSample {
    pub fn new(set: Arc<DescriptorSet>, class_id: usize) -> Self {
        Self {
            set,
            class_id,
            source: None,
        }
    }
}

/// One N-way K-shot task.
///
/// Support samples are ordered class-major: the K shots of class 0, then of
/// class 1, and so on.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    n_way: usize,
    k_shot: usize,
    support: Vec<LabeledSample>,
    queries: Vec<LabeledSample>,
}

impl Episode {
    /// Validates and sorts the support set class-major (stable within a class).
    pub fn new(
        n_way: usize,
        k_shot: usize,
        mut support: Vec<LabeledSample>,
        queries: Vec<LabeledSample>,
    ) -> Result<Self> {
        if n_way == 0 || k_shot == 0 {
            return Err(Error::invalid("episodes need n_way ≥ 1 and k_shot ≥ 1"));
        }
        if support.len() != n_way * k_shot {
            return Err(Error::invalid(format!(
                "support has {} samples, expected {n_way}·{k_shot}",
                support.len()
            )));
        }
        let mut counts = vec![0usize; n_way];
        for s in support.iter().chain(&queries) {
            if s.class_id >= n_way {
                return Err(Error::invalid(format!(
                    "label {} outside a {n_way}-way episode",
                    s.class_id
                )));
            }
        }
        for s in &support {
            counts[s.class_id] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n != k_shot) {
            return Err(Error::invalid(format!(
                "class {c} has {} support samples, expected {k_shot}",
                counts[c]
            )));
        }
        let d = support[0].set.dim();
        let shape = (support[0].set.height(), support[0].set.width());
        for s in support.iter().chain(&queries) {
            if s.set.dim() != d {
                return Err(Error::invalid(format!(
                    "descriptor dimension {} differs from {d} within one episode",
                    s.set.dim()
                )));
            }
            if (s.set.height(), s.set.width()) != shape {
                return Err(Error::invalid("grid sizes differ within one episode"));
            }
        }
        support.sort_by_key(|s| s.class_id);
        Ok(Self {
            n_way,
            k_shot,
            support,
            queries,
        })
    }

    pub fn n_way(&self) -> usize {
        self.n_way
    }

    pub fn k_shot(&self) -> usize {
        self.k_shot
    }

    pub fn support(&self) -> &[LabeledSample] {
        &self.support
    }

    pub fn queries(&self) -> &[LabeledSample] {
        &self.queries
    }

    /// The K support samples of class `c`.
    pub fn class_support(&self, c: usize) -> &[LabeledSample] {
        &self.support[c * self.k_shot..(c + 1) * self.k_shot]
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.queries.iter().map(|q| q.class_id).collect()
    }

    /// Raw grid shape `(h, w, d)` shared by every sample.
    pub fn input_dims(&self) -> (usize, usize, usize) {
        let s = &self.support[0].set;
        (s.height(), s.width(), s.dim())
    }

    /// Same episode with classes relabelled: old label `c` becomes `perm[c]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_way {
            return Err(Error::invalid("permutation length differs from n_way"));
        }
        let relabel = |s: &LabeledSample| LabeledSample {
            class_id: perm[s.class_id],
            ..s.clone()
        };
        Self::new(
            self.n_way,
            self.k_shot,
            self.support.iter().map(relabel).collect(),
            self.queries.iter().map(relabel).collect(),
        )
    }

    /// Same episode with every descriptor multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let scale = |s: &LabeledSample| -> Result<LabeledSample> {
            Ok(LabeledSample {
                set: Arc::new(s.set.scaled(factor)?),
                ..s.clone()
            })
        };
        Self::new(
            self.n_way,
            self.k_shot,
            self.support.iter().map(scale).collect::<Result<_>>()?,
            self.queries.iter().map(scale).collect::<Result<_>>()?,
        )
    }
}
