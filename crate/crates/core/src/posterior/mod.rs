//! Exact recursive posteriors of the Gaussian hierarchy.
//!
//! Each node caches two Gaussian likelihood summaries in precision form:
//!
//! - `data`: the likelihood of every observation below the node, as a
//!   function of the node's own value. For a leaf this is the observation
//!   likelihood; for an internal node it is the product of its children's
//!   upward messages.
//! - `up`: the same likelihood with the node's value integrated out against
//!   its conditional prior, i.e. as a function of the parent's value.
//!
//! The conditional posterior of a node given its parent then only needs the
//! node's prior and its `data` summary. An observation at a leaf changes
//! `data`/`up` only on the leaf's path to the root.

pub mod linear;
pub mod mab;

use serde::Serialize;

use crate::hierarchy::NodeId;

/// One joint draw `Θ_t = (θ_{t,i})` over all nodes, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSample {
    dim: usize,
    values: Vec<f64>,
}

impl ModelSample {
    pub(crate) fn new(dim: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len() % dim, 0);
        ModelSample { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn node(&self, id: NodeId) -> &[f64] {
        &self.values[id.index() * self.dim..(id.index() + 1) * self.dim]
    }

    /// Value of a scalar node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.node(id)[0]
    }

    /// Mean reward `xᵀθ` of node `id` under this sample.
    pub fn reward(&self, id: NodeId, context: &[f64]) -> f64 {
        self.node(id).iter().zip(context).map(|(t, x)| t * x).sum()
    }
}

/// Work performed while drawing a sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SamplingCost {
    /// Standard normal variates drawn.
    pub normal_draws: u64,
    /// Floating-point operations (multiply, add, divide, square root).
    pub flops: u64,
}

impl SamplingCost {
    pub fn total(&self) -> u64 {
        self.normal_draws + self.flops
    }
}
