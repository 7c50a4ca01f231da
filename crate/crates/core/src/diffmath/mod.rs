//! Minimal dense reverse-mode differentiation, optimizers and gradient checks.

mod graph;
pub mod gradcheck;
pub mod optim;
mod params;

pub use gradcheck::{gradient_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{sigmoid, Graph, Matrix, NodeId, ZeroNorm};
pub(crate) use graph::argmax;
pub use optim::{step_decay, Milestone, OptimizerConfig, OptimizerKind, OptimizerState};
pub use params::{parameter_norms, Bound, Gradients, ParamStore};

use crate::error::{Error, Result};

/// LeakyReLU negative slope used throughout the network.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Cosine similarity of two vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64], zero: ZeroNorm) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "cosine similarity of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return match zero {
            ZeroNorm::Lenient => Ok(0.0),
            ZeroNorm::Strict => Err(Error::invalid("zero-norm vector in cosine similarity")),
        };
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
