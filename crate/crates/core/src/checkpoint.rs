//! JSON checkpoints: model configuration, parameters, running statistics and
//! the run configuration that produced them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::diffmath::{Matrix, ParamStore};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub shape: [usize; 2],
    /// Row-major values.
    pub data: Vec<f64>,
}

impl Tensor {
    fn from_matrix(m: &Matrix) -> Self {
        Self {
            shape: [m.nrows(), m.ncols()],
            data: m.iter().copied().collect(),
        }
    }

    fn to_matrix(&self, name: &str) -> Result<Matrix> {
        let [r, c] = self.shape;
        if r.checked_mul(c) != Some(self.data.len()) {
            return Err(Error::format(format!(
                "tensor {name}: shape {r}x{c} does not match {} values",
                self.data.len()
            )));
        }
        Ok(Matrix::from_shape_vec((r, c), self.data.clone()).expect("length checked"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunConfig>,
}

fn tensors(store: &ParamStore) -> BTreeMap<String, Tensor> {
    store.iter().map(|(k, v)| (k.clone(), Tensor::from_matrix(v))).collect()
}

fn store(tensors: &BTreeMap<String, Tensor>) -> Result<ParamStore> {
    tensors.iter().map(|(k, t)| Ok((k.clone(), t.to_matrix(k)?))).collect()
}

impl Checkpoint {
    pub fn from_model(model: &Model, run: Option<RunConfig>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            model: model.config.clone(),
            params: tensors(&model.params),
            buffers: tensors(&model.buffers),
            run,
        }
    }

    /// Rebuilds the model, checking every tensor against its configuration.
    pub fn to_model(&self) -> Result<Model> {
        let model = Model {
            config: self.model.clone(),
            params: store(&self.params)?,
            buffers: store(&self.buffers)?,
        };
        model
            .config
            .validate()
            .map_err(|e| Error::format(format!("checkpoint model config: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_slice(bytes).map_err(|e| Error::format(format!("checkpoint: {e}")))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(ck)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes).map_err(|e| Error::format(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{BackboneKind, GridDims};

    fn model() -> Model {
        let mut cfg = ModelConfig::new(GridDims { h: 4, w: 4, c: 2 });
        cfg.backbone = BackboneKind::TinyConv { hidden: 3, out_dim: 5 };
        Model::init(cfg, 7).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let ck = Checkpoint::from_model(&m, Some(RunConfig::new(7)));
        let back = Checkpoint::parse(ck.to_json().as_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap(), m);
    }

    #[test]
    fn rejects_inconsistent_tensors() {
        let m = model();
        let mut ck = Checkpoint::from_model(&m, None);
        ck.params.get_mut("transform.weight").unwrap().shape = [2, 2];
        assert!(ck.to_model().is_err());

        let mut ck = Checkpoint::from_model(&m, None);
        ck.params.remove("f_psi.fc1.bias");
        assert!(ck.to_model().is_err());

        let mut ck = Checkpoint::from_model(&m, None);
        ck.version = 9;
        assert!(Checkpoint::parse(ck.to_json().as_bytes()).is_err());
        assert!(Checkpoint::parse(b"{}").is_err());
        assert!(Checkpoint::parse(b"\x00").is_err());
    }
}
