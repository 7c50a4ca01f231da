use std::collections::BTreeMap;

use super::graph::{Graph, Matrix, NodeId};
use crate::error::{Error, Result};

/// Named parameter arrays, iterated in lexicographic name order.
pub type ParamStore = BTreeMap<String, Matrix>;

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Matrix>;

/// Parameters registered as leaves of one graph.
#[derive(Debug, Default, Clone)]
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    /// Registers every entry of `store` as a trainable leaf.
    pub fn all(graph: &mut Graph, store: &ParamStore) -> Self {
        Self::with_frozen(graph, store, |_| false)
    }

    /// Registers `store`, turning entries selected by `frozen` into constants.
    pub fn with_frozen(graph: &mut Graph, store: &ParamStore, frozen: impl Fn(&str) -> bool) -> Self {
        let ids = store
            .iter()
            .map(|(name, value)| {
                let id = if frozen(name) {
                    graph.constant(value.clone())
                } else {
                    graph.param(value.clone())
                };
                (name.clone(), id)
            })
            .collect();
        Self { ids }
    }

    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("parameter `{name}` is not bound")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.ids.keys().map(String::as_str)
    }

    /// Reads gradients after [`Graph::backward`]. Parameters the loss does not
    /// reach get zeros.
    pub fn gradients(&self, graph: &Graph) -> Result<Gradients> {
        if !graph.backward_done() {
            return Err(Error::contract("gradients requested before backward"));
        }
        Ok(self
            .ids
            .iter()
            .map(|(name, &id)| {
                let g = graph
                    .grad(id)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(graph.value(id).dim()));
                (name.clone(), g)
            })
            .collect())
    }
}

/// L2 norm of every parameter, in name order.
pub fn parameter_norms(store: &ParamStore) -> Vec<(String, f64)> {
    store
        .iter()
        .map(|(k, v)| (k.clone(), v.iter().map(|x| x * x).sum::<f64>().sqrt()))
        .collect()
}
