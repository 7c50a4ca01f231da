use std::ops::Range;

use ndarray::ArrayView2;

use crate::diffmath::{cosine_similarity, ZeroNorm};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub similarity: f64,
}

/// The `k` best candidates in `range`, by descending `score` with ties to the
/// lowest index. `exclude` is never returned. Fewer than `k` come back when the
/// range is too small.
pub fn top_k(score: impl Fn(usize) -> f64, range: Range<usize>, k: usize, exclude: Option<usize>) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
    for j in range {
        if Some(j) == exclude {
            continue;
        }
        let s = score(j);
        if best.len() == k && !(s > best[k - 1].1) {
            continue;
        }
        // Insert after every entry with an equal or better score.
        let pos = best.iter().position(|&(_, b)| s > b).unwrap_or(best.len());
        best.insert(pos, (j, s));
        best.truncate(k);
    }
    best.into_iter().map(|(j, _)| j).collect()
}

/// k nearest pool rows to `query` by cosine similarity, best first.
///
/// `k` is clamped to the number of candidates left after exclusion.
pub fn knn(
    query: &[f64],
    pool: ArrayView2<'_, f64>,
    k: usize,
    exclude_index: Option<usize>,
    zero: ZeroNorm,
) -> Result<Vec<Neighbor>> {
    if pool.ncols() != query.len() {
        return Err(Error::invalid(format!(
            "query has dimension {}, pool rows have {}",
            query.len(),
            pool.ncols()
        )));
    }
    let available = pool.nrows() - usize::from(exclude_index.is_some_and(|e| e < pool.nrows()));
    if available == 0 {
        return Err(Error::invalid("kNN pool is empty after exclusion"));
    }
    if k == 0 {
        return Err(Error::invalid("kNN needs k ≥ 1"));
    }
    let sims = pool
        .rows()
        .into_iter()
        .map(|row| match row.as_slice() {
            Some(r) => cosine_similarity(query, r, zero),
            None => cosine_similarity(query, &row.to_vec(), zero),
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(top_k(|j| sims[j], 0..pool.nrows(), k, exclude_index)
        .into_iter()
        .map(|index| Neighbor {
            index,
            similarity: sims[index],
        })
        .collect())
}
