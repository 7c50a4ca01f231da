//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, NodeId};
use super::params::{Bound, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error, so entries where both
    /// gradients are near zero are compared absolutely.
    pub floor: f64,
    /// Test hook: multiplies every analytic gradient by this factor.
    #[doc(hidden)]
    pub sabotage: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            tolerance: 1e-4,
            floor: 1e-5,
            sabotage: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst entry, with its analytic and numeric values.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params
            .iter()
            .filter(move |p| !(p.max_rel_error < self.tolerance))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / scale
}

/// Compares backward gradients of `f` with central differences at `params`.
///
/// `f` must rebuild the whole computation from the bound leaves every time it
/// is called; it runs once for the analytic pass and twice per entry.
pub fn gradient_check<F>(f: F, params: &ParamStore, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Bound) -> Result<NodeId>,
{
    if !(opts.epsilon > 0.0) {
        return Err(Error::invalid("gradient check epsilon must be positive"));
    }
    let mut graph = Graph::new();
    let bound = Bound::all(&mut graph, params);
    let loss = f(&mut graph, &bound)?;
    graph.backward(loss)?;
    let grads = bound.gradients(&graph)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let b = Bound::all(&mut g, store);
        let l = f(&mut g, &b)?;
        Ok(g.scalar(l))
    };

    let mut report = Vec::with_capacity(params.len());
    let mut probe = params.clone();
    for (name, value) in params {
        let analytic = &grads[name];
        let mut check = ParamCheck {
            name: name.clone(),
            entries: value.len(),
            max_rel_error: 0.0,
            worst: None,
        };
        for flat in 0..value.len() {
            let (r, c) = (flat / value.ncols(), flat % value.ncols());
            let x0 = value[[r, c]];
            probe.get_mut(name).unwrap()[[r, c]] = x0 + opts.epsilon;
            let up = eval(&probe)?;
            probe.get_mut(name).unwrap()[[r, c]] = x0 - opts.epsilon;
            let down = eval(&probe)?;
            probe.get_mut(name).unwrap()[[r, c]] = x0;
            let numeric = (up - down) / (2.0 * opts.epsilon);
            let a = analytic[[r, c]] * opts.sabotage.unwrap_or(1.0);
            let err = relative_error(a, numeric, opts.floor);
            if check.worst.is_none() || err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst = Some((flat, a, numeric));
            }
        }
        report.push(check);
    }
    let max_rel_error = report.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_rel_error < opts.tolerance,
        max_rel_error,
        tolerance: opts.tolerance,
        params: report,
    })
}
