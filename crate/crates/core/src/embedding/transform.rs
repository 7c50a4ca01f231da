use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{batch_norm, init_batch_norm, kaiming, linear, BnObservation, Mode};
use crate::descriptors::DescriptorSet;
use crate::diffmath::{Bound, Graph, Matrix, NodeId, ParamStore, LEAKY_SLOPE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformInit {
    /// Identity projection (truncated when the dimensions differ).
    #[default]
    Identity,
    Random,
    /// All-zero projection: every descriptor maps to the bias.
    Zero,
}

/// Per-descriptor 1×1 projection, batch norm and LeakyReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformConfig {
    pub enabled: bool,
    /// Output dimension; `None` keeps the input dimension.
    pub out_dim: Option<usize>,
    pub normalization: bool,
    pub init: TransformInit,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            out_dim: None,
            normalization: true,
            init: TransformInit::Identity,
        }
    }
}

impl TransformConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn output_dim(&self, d_in: usize) -> usize {
        if self.enabled {
            self.out_dim.unwrap_or(d_in)
        } else {
            d_in
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_dim == Some(0) {
            return Err(Error::invalid("transform out_dim must be ≥ 1"));
        }
        Ok(())
    }

    pub fn init(&self, params: &mut ParamStore, buffers: &mut ParamStore, rng: &mut impl Rng, d_in: usize) {
        if !self.enabled {
            return;
        }
        let d_out = self.output_dim(d_in);
        let weight = match self.init {
            TransformInit::Identity => Matrix::from_shape_fn((d_in, d_out), |(i, j)| f64::from(u8::from(i == j))),
            TransformInit::Random => kaiming(rng, d_in, d_out),
            TransformInit::Zero => Matrix::zeros((d_in, d_out)),
        };
        params.insert("transform.weight".into(), weight);
        params.insert("transform.bias".into(), Matrix::zeros((1, d_out)));
        if self.normalization {
            init_batch_norm(params, buffers, "transform.bn", d_out);
        }
    }

    pub fn apply(
        &self,
        g: &mut Graph,
        bound: &Bound,
        buffers: &ParamStore,
        x: NodeId,
        mode: Mode,
        observations: &mut Vec<BnObservation>,
    ) -> Result<NodeId> {
        if !self.enabled {
            return Ok(x);
        }
        let y = linear(g, bound, "transform", x)?;
        let y = if self.normalization {
            batch_norm(g, bound, buffers, "transform.bn", y, mode, observations)?
        } else {
            y
        };
        Ok(g.leaky_relu(y, LEAKY_SLOPE))
    }
}

/// Evaluation-mode transform of one descriptor set.
pub fn transform(
    config: &TransformConfig,
    params: &ParamStore,
    buffers: &ParamStore,
    set: &DescriptorSet,
) -> Result<DescriptorSet> {
    if config.enabled {
        let expected = params
            .get("transform.weight")
            .map(|w| w.nrows())
            .ok_or_else(|| Error::contract("transform parameters missing"))?;
        if expected != set.dim() {
            return Err(Error::invalid(format!(
                "transform expects d = {expected}, got {}",
                set.dim()
            )));
        }
    }
    let mut g = Graph::new();
    let bound = Bound::all(&mut g, params);
    let x = g.constant(set.descriptors().clone());
    let y = config.apply(&mut g, &bound, buffers, x, Mode::Eval, &mut Vec::new())?;
    DescriptorSet::new(g.value(y).clone(), set.height(), set.width())
}
