//! Layer building blocks shared by the backbones, the transform and the
//! threshold networks.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffmath::{Bound, Graph, Matrix, NodeId, ParamStore, LEAKY_SLOPE};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Whether normalization layers use batch statistics or frozen running ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics seen by one normalization layer during a training pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BnObservation {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// Folds observed batch statistics into the running buffers.
pub fn apply_bn_observations(buffers: &mut ParamStore, observations: &[BnObservation]) -> Result<()> {
    for obs in observations {
        let unbiased = if obs.count > 1 {
            obs.count as f64 / (obs.count - 1) as f64
        } else {
            1.0
        };
        let mean_key = format!("{}.running_mean", obs.prefix);
        let var_key = format!("{}.running_var", obs.prefix);
        let rm = buffers
            .get_mut(&mean_key)
            .ok_or_else(|| Error::contract(format!("missing buffer {mean_key}")))?;
        for (r, &m) in rm.iter_mut().zip(&obs.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        let rv = buffers
            .get_mut(&var_key)
            .ok_or_else(|| Error::contract(format!("missing buffer {var_key}")))?;
        for (r, &v) in rv.iter_mut().zip(&obs.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbiased;
        }
    }
    Ok(())
}

pub(crate) fn kaiming(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    Matrix::from_shape_fn((fan_in, fan_out), |_| normal.sample(rng))
}

pub(crate) fn init_batch_norm(params: &mut ParamStore, buffers: &mut ParamStore, prefix: &str, channels: usize) {
    params.insert(format!("{prefix}.gamma"), Matrix::ones((1, channels)));
    params.insert(format!("{prefix}.beta"), Matrix::zeros((1, channels)));
    buffers.insert(format!("{prefix}.running_mean"), Matrix::zeros((1, channels)));
    buffers.insert(format!("{prefix}.running_var"), Matrix::ones((1, channels)));
}

/// Per-channel normalization followed by the learned affine map.
pub(crate) fn batch_norm(
    g: &mut Graph,
    bound: &Bound,
    buffers: &ParamStore,
    prefix: &str,
    x: NodeId,
    mode: Mode,
    observations: &mut Vec<BnObservation>,
) -> Result<NodeId> {
    let normalized = match mode {
        Mode::Train => {
            let y = g.batch_norm(x, BN_EPS);
            let (mean, var) = g.batch_stats(y).expect("batch-norm node");
            observations.push(BnObservation {
                prefix: prefix.to_string(),
                mean: mean.to_vec(),
                var: var.to_vec(),
                count: g.value(x).nrows(),
            });
            y
        }
        Mode::Eval => {
            let buf = |name: &str| {
                let key = format!("{prefix}.{name}");
                buffers
                    .get(&key)
                    .ok_or_else(|| Error::contract(format!("missing buffer {key}")))
            };
            let shift = g.constant(buf("running_mean")?.mapv(|m| -m));
            let inv = g.constant(buf("running_var")?.mapv(|v| 1.0 / (v + BN_EPS).sqrt()));
            let centered = g.add_row(x, shift);
            g.mul_row(centered, inv)
        }
    };
    let scaled = g.mul_row(normalized, bound.get(&format!("{prefix}.gamma"))?);
    Ok(g.add_row(scaled, bound.get(&format!("{prefix}.beta"))?))
}

/// `x·W + b`.
pub(crate) fn linear(g: &mut Graph, bound: &Bound, prefix: &str, x: NodeId) -> Result<NodeId> {
    let y = g.matmul(x, bound.get(&format!("{prefix}.weight"))?);
    Ok(g.add_row(y, bound.get(&format!("{prefix}.bias"))?))
}

/// Two fully connected layers with a LeakyReLU between them, one output logit
/// per row. The threshold itself is `sigmoid` of this logit.
pub fn init_threshold_mlp(
    params: &mut ParamStore,
    rng: &mut impl Rng,
    prefix: &str,
    input: usize,
    hidden: usize,
    initial_threshold: f64,
) {
    params.insert(format!("{prefix}.fc1.weight"), kaiming(rng, input, hidden));
    params.insert(format!("{prefix}.fc1.bias"), Matrix::zeros((1, hidden)));
    params.insert(format!("{prefix}.fc2.weight"), Matrix::zeros((hidden, 1)));
    let logit = (initial_threshold / (1.0 - initial_threshold)).ln();
    params.insert(format!("{prefix}.fc2.bias"), Matrix::from_elem((1, 1), logit));
}

pub(crate) fn threshold_mlp(g: &mut Graph, bound: &Bound, prefix: &str, x: NodeId) -> Result<NodeId> {
    let h = linear(g, bound, &format!("{prefix}.fc1"), x)?;
    let h = g.leaky_relu(h, LEAKY_SLOPE);
    linear(g, bound, &format!("{prefix}.fc2"), h)
}
