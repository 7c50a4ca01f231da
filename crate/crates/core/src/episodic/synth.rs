use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::descriptors::{Dataset, DescriptorSet};
use crate::diffmath::Matrix;
use crate::error::{Error, Result};

/// Planted-cluster dataset: each sample mixes rows drawn around its class
/// center ("signal") with rows drawn around one of a few background centers
/// shared by all classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub signal_fraction: f64,
    /// Expected distance between two class centers.
    pub cluster_separation: f64,
    /// Per-coordinate standard deviation around a center.
    pub noise_scale: f64,
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples_per_class: usize,
    /// Shared background centers the distractor rows are drawn around.
    #[serde(default = "default_distractors")]
    pub distractor_centers: usize,
}

fn default_samples() -> usize {
    20
}

fn default_distractors() -> usize {
    4
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 32,
            height: 6,
            width: 6,
            signal_fraction: 0.4,
            cluster_separation: 4.0,
            noise_scale: 1.0,
            seed: 0,
            samples_per_class: default_samples(),
            distractor_centers: default_distractors(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.dim == 0 || self.height == 0 || self.width == 0 || self.samples_per_class == 0 {
            return Err(Error::invalid("synthetic spec needs nonzero classes, dim, grid and samples"));
        }
        // 0 is allowed: the no-signal control dataset.
        if !(0.0..=1.0).contains(&self.signal_fraction) {
            return Err(Error::invalid(format!(
                "signal_fraction must lie in [0, 1], got {}",
                self.signal_fraction
            )));
        }
        if !(self.cluster_separation >= 0.0 && self.cluster_separation.is_finite()) {
            return Err(Error::invalid("cluster_separation must be finite and ≥ 0"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::invalid("noise_scale must be finite and ≥ 0"));
        }
        if self.distractor_centers == 0 && self.signal_rows() < self.height * self.width {
            return Err(Error::invalid("distractor rows need at least one distractor center"));
        }
        Ok(())
    }

    /// Signal rows per sample, `⌊signal_fraction · m⌋`.
    pub fn signal_rows(&self) -> usize {
        // The epsilon keeps products such as 0.3·10 from flooring to 2.
        (self.signal_fraction * (self.height * self.width) as f64 + 1e-9).floor() as usize
    }
}

/// Generates the dataset and its signal masks. Values are rounded to 32-bit
/// precision so the in-memory dataset equals what a save/load round trip yields.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let m = spec.height * spec.width;
    let center_std = spec.cluster_separation / (2.0 * d as f64).sqrt();
    let draw_centers = |rng: &mut ChaCha8Rng, n: usize| -> Matrix {
        let normal = Normal::new(0.0, center_std).expect("finite std");
        Matrix::from_shape_fn((n, d), |_| normal.sample(rng))
    };
    let centers = draw_centers(&mut rng, spec.classes);
    let background = draw_centers(&mut rng, spec.distractor_centers);
    let noise = Normal::new(0.0, spec.noise_scale).expect("finite std");
    let n_signal = spec.signal_rows();

    let mut samples = Vec::with_capacity(spec.classes);
    let mut masks = Vec::with_capacity(spec.classes);
    for c in 0..spec.classes {
        let mut class_samples = Vec::with_capacity(spec.samples_per_class);
        let mut class_masks = Vec::with_capacity(spec.samples_per_class);
        for _ in 0..spec.samples_per_class {
            let mut mask = vec![false; m];
            for i in sample(&mut rng, m, n_signal) {
                mask[i] = true;
            }
            // One background per image, shared with images of other classes:
            // a matching background is a spurious vote for the wrong class.
            let bg = if spec.distractor_centers > 0 {
                rng.random_range(0..spec.distractor_centers)
            } else {
                0
            };
            let mut x = Matrix::zeros((m, d));
            for (i, &signal) in mask.iter().enumerate() {
                let center = if signal { centers.row(c) } else { background.row(bg) };
                for (dst, &mu) in x.row_mut(i).iter_mut().zip(center) {
                    *dst = f64::from((mu + noise.sample(&mut rng)) as f32);
                }
            }
            class_samples.push(Arc::new(DescriptorSet::new(x, spec.height, spec.width)?));
            class_masks.push(mask);
        }
        samples.push(class_samples);
        masks.push(class_masks);
    }
    let dataset = Dataset {
        class_names: (0..spec.classes).map(|c| format!("class_{c:03}")).collect(),
        sample_ids: (0..spec.classes)
            .map(|_| (0..spec.samples_per_class).map(|s| format!("sample_{s:04}")).collect())
            .collect(),
        samples,
        signal_masks: Some(masks),
    };
    dataset.validate()?;
    Ok(dataset)
}
