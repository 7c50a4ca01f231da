use serde::{Deserialize, Serialize};

use super::episode::LabeledSample;
use crate::diffmath::Matrix;
use crate::error::{Error, Result};

/// How the K support shots of one class are merged into a descriptor pool.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMode {
    /// Concatenate all `K·m` descriptors.
    #[default]
    Union,
    /// Average the K shots per spatial index, keeping `m` rows.
    Mean,
}

impl std::str::FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" => Ok(Self::Union),
            "mean" => Ok(Self::Mean),
            other => Err(Error::invalid(format!("unknown aggregation mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassPool {
    pub class_id: usize,
    pub pool: Matrix,
}

/// Row weights that turn `k` stacked shots of `m` rows into a class pool.
///
/// Row `s·m + i` of the stacked input is descriptor `i` of shot `s`. The result
/// feeds [`crate::diffmath::Graph::sparse_rows`] or plain matrix assembly.
pub fn pool_weights(k: usize, m: usize, mode: AggregationMode) -> Vec<Vec<(usize, f64)>> {
    match mode {
        AggregationMode::Union => (0..k * m).map(|r| vec![(r, 1.0)]).collect(),
        AggregationMode::Mean => {
            let w = 1.0 / k as f64;
            (0..m).map(|i| (0..k).map(|s| (s * m + i, w)).collect()).collect()
        }
    }
}

pub fn build_class_pool(samples: &[LabeledSample], mode: AggregationMode) -> Result<ClassPool> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("class pool from an empty sample list"))?;
    let (m, d) = first.set.descriptors().dim();
    for s in samples {
        if s.class_id != first.class_id {
            return Err(Error::invalid(format!(
                "class pool mixes classes {} and {}",
                first.class_id, s.class_id
            )));
        }
        if s.set.descriptors().dim() != (m, d) {
            return Err(Error::invalid("class pool samples differ in shape"));
        }
    }
    let weights = pool_weights(samples.len(), m, mode);
    let mut pool = Matrix::zeros((weights.len(), d));
    for (r, terms) in weights.iter().enumerate() {
        for &(src, w) in terms {
            let shot = samples[src / m].set.descriptors();
            pool.row_mut(r).scaled_add(w, &shot.row(src % m));
        }
    }
    Ok(ClassPool {
        class_id: first.class_id,
        pool,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use ndarray::array;
    use proptest::prelude::*;

    use super::*;
    use crate::descriptors::DescriptorSet;

    fn sample(rows: Matrix, h: usize, w: usize) -> LabeledSample {
        LabeledSample::new(Arc::new(DescriptorSet::new(rows, h, w).unwrap()), 0)
    }

    #[test]
    fn single_shot_is_identity_in_both_modes() {
        let s = sample(array![[1.0, 2.0], [3.0, 4.0]], 1, 2);
        for mode in [AggregationMode::Union, AggregationMode::Mean] {
            let p = build_class_pool(std::slice::from_ref(&s), mode).unwrap();
            assert_eq!(&p.pool, s.set.descriptors());
        }
    }

    #[test]
    fn mean_mode_averages_per_index() {
        let a = sample(array![[1.0, 0.0], [5.0, 5.0]], 1, 2);
        let b = sample(array![[0.0, 1.0], [1.0, 1.0]], 1, 2);
        let p = build_class_pool(&[a, b], AggregationMode::Mean).unwrap();
        assert_eq!(p.pool, array![[0.5, 0.5], [3.0, 3.0]]);
    }

    #[test]
    fn union_mode_row_count() {
        let shots: Vec<_> = (0..5)
            .map(|i| sample(Matrix::from_elem((361, 4), i as f64), 19, 19))
            .collect();
        let p = build_class_pool(&shots, AggregationMode::Union).unwrap();
        assert_eq!(p.pool.nrows(), 1805);
        assert_eq!(p.pool[[361, 0]], 1.0);
    }

    #[test]
    fn empty_and_mixed_inputs_rejected() {
        assert!(build_class_pool(&[], AggregationMode::Union).is_err());
        let a = sample(array![[1.0]], 1, 1);
        let mut b = sample(array![[1.0]], 1, 1);
        b.class_id = 1;
        assert!(build_class_pool(&[a.clone(), b], AggregationMode::Mean).is_err());
        let c = sample(array![[1.0, 2.0]], 1, 1);
        assert!(build_class_pool(&[a, c], AggregationMode::Mean).is_err());
    }

    proptest! {
        #[test]
        fn mean_pool_is_permutation_invariant(k in 1usize..6, m in 1usize..5, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng, seq::SliceRandom};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut shots: Vec<_> = (0..k)
                .map(|_| sample(Matrix::from_shape_fn((m, 3), |_| rng.random_range(-5.0..5.0)), m, 1))
                .collect();
            let p1 = build_class_pool(&shots, AggregationMode::Mean).unwrap();
            shots.shuffle(&mut rng);
            let p2 = build_class_pool(&shots, AggregationMode::Mean).unwrap();
            for (a, b) in p1.pool.iter().zip(p2.pool.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
