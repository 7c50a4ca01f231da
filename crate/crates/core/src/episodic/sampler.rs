use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptors::{Dataset, Episode, LabeledSample, SampleRef};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub queries_per_class: usize,
    pub seed: u64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 1,
            queries_per_class: 15,
            seed: 0,
        }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::invalid(format!("n_way must be ≥ 2, got {}", self.n_way)));
        }
        if self.k_shot == 0 || self.queries_per_class == 0 {
            return Err(Error::invalid("k_shot and queries_per_class must be ≥ 1"));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of episode `index` in the stream rooted at `root`. Streams with
/// different `salt` values do not overlap in practice.
pub fn episode_seed(root: u64, salt: u64, index: u64) -> u64 {
    splitmix(splitmix(root ^ splitmix(salt)).wrapping_add(index))
}

/// Draws `n_way` classes and, per class, `k_shot + queries_per_class` samples,
/// all without replacement. Episode label `c` is the `c`-th drawn class.
pub fn sample_episode(dataset: &Dataset, spec: &EpisodeSpec) -> Result<Episode> {
    spec.validate()?;
    let available = dataset.num_classes();
    if available < spec.n_way {
        return Err(Error::invalid(format!(
            "{}-way episodes need {} classes, dataset has {available} ({} short)",
            spec.n_way,
            spec.n_way,
            spec.n_way - available
        )));
    }
    let per_class = spec.k_shot + spec.queries_per_class;
    for (c, s) in dataset.samples.iter().enumerate() {
        if s.len() < per_class {
            return Err(Error::invalid(format!(
                "class {:?} has {} samples, episodes need {per_class} ({} short)",
                dataset.class_names[c],
                s.len(),
                per_class - s.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let classes = sample(&mut rng, available, spec.n_way).into_vec();
    let mut support = Vec::with_capacity(spec.n_way * spec.k_shot);
    let mut queries = Vec::with_capacity(spec.n_way * spec.queries_per_class);
    for (label, &class) in classes.iter().enumerate() {
        let picks = sample(&mut rng, dataset.samples[class].len(), per_class).into_vec();
        for (j, &index) in picks.iter().enumerate() {
            let s = LabeledSample {
                set: dataset.samples[class][index].clone(),
                class_id: label,
                source: Some(SampleRef { class, index }),
            };
            if j < spec.k_shot {
                support.push(s);
            } else {
                queries.push(s);
            }
        }
    }
    Episode::new(spec.n_way, spec.k_shot, support, queries)
}
