use ndarray::{Array2, Array3};

use crate::diffmath::Matrix;
use crate::error::{Error, Result};

/// The `m = h·w` local descriptors of one image, one row per spatial cell in
/// row-major `(r, c)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorSet {
    descriptors: Matrix,
    height: usize,
    width: usize,
}

impl DescriptorSet {
    pub fn new(descriptors: Matrix, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("grid {height}x{width} has a zero side")));
        }
        let (m, d) = descriptors.dim();
        if m != height * width {
            return Err(Error::invalid(format!(
                "{m} descriptors do not fill a {height}x{width} grid"
            )));
        }
        if d == 0 {
            return Err(Error::invalid("descriptor dimension is zero"));
        }
        if let Some(pos) = descriptors.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite descriptor value at row {} column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self {
            descriptors,
            height,
            width,
        })
    }

    pub fn descriptors(&self) -> &Matrix {
        &self.descriptors
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of descriptors `m`.
    pub fn len(&self) -> usize {
        self.descriptors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.descriptors.ncols()
    }

    /// Same grid with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.descriptors * factor, self.height, self.width)
    }
}

/// Flattens an `h×w×d` feature map into `h·w` descriptors.
pub fn flatten_feature_map(feature_map: &Array3<f64>) -> Result<DescriptorSet> {
    let (h, w, d) = feature_map.dim();
    if h == 0 || w == 0 || d == 0 {
        return Err(Error::invalid(format!("feature map {h}x{w}x{d} has an empty axis")));
    }
    let flat: Vec<f64> = feature_map.iter().copied().collect();
    let descriptors = Array2::from_shape_vec((h * w, d), flat).expect("element count matches");
    DescriptorSet::new(descriptors, h, w)
}

/// Inverse of [`flatten_feature_map`].
pub fn unflatten(set: &DescriptorSet) -> Array3<f64> {
    let flat: Vec<f64> = set.descriptors.iter().copied().collect();
    Array3::from_shape_vec((set.height, set.width, set.dim()), flat).expect("element count matches")
}
