//! Tree structure, per-node conditional priors and the JSON tree file.
//!
//! Nodes are numbered from 1 and the root is always node 1. Heights are
//! computed from the structure: leaves (action nodes) have height 0 and every
//! internal node sits one above its tallest child. Trees may be unbalanced.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// 1-based node index. The root is [`NodeId::ROOT`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(1);

    /// Zero-based position, for indexing per-node arrays.
    #[inline]
    pub fn index(self) -> usize {
        self.0 - 1
    }

    #[inline]
    pub fn from_index(index: usize) -> Self {
        NodeId(index + 1)
    }

    pub fn is_root(self) -> bool {
        self == Self::ROOT
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Immutable rooted tree over nodes `1..=len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    height: Vec<usize>,
    depth: Vec<usize>,
    actions: Vec<NodeId>,
    action_index: Vec<Option<usize>>,
    top_down: Vec<NodeId>,
    branching: usize,
}

impl Hierarchy {
    /// Builds a tree from the parent of every non-root node.
    ///
    /// The node count is the largest id mentioned. Every id in `2..=len` must
    /// have a parent, internal nodes need at least two children and the graph
    /// must be acyclic.
    pub fn from_parents(parents: &BTreeMap<NodeId, NodeId>) -> Result<Self> {
        if parents.is_empty() {
            return Err(Error::TooFewLeaves);
        }
        if parents.keys().any(|id| id.0 <= 1) {
            return Err(Error::BadRoot);
        }
        if let Some(zero) = parents.values().find(|p| p.0 == 0) {
            return Err(Error::UnknownNode(*zero));
        }
        let len = parents.iter().flat_map(|(c, p)| [c.0, p.0]).max().unwrap_or(1);

        let mut parent = vec![None; len];
        for (&child, &p) in parents {
            parent[child.index()] = Some(p);
        }
        if let Some(missing) = (1..len).find(|&i| parent[i].is_none()) {
            return Err(Error::Disconnected(NodeId::from_index(missing)));
        }

        // Depth by walking up with memoisation; a walk that revisits a node
        // on its own stack is a cycle.
        const UNSET: usize = usize::MAX;
        let mut depth = vec![UNSET; len];
        depth[0] = 0;
        let mut on_stack = vec![false; len];
        for start in 0..len {
            let mut stack = Vec::new();
            let mut cur = start;
            while depth[cur] == UNSET {
                if on_stack[cur] {
                    return Err(Error::Cycle(NodeId::from_index(cur)));
                }
                on_stack[cur] = true;
                stack.push(cur);
                cur = parent[cur].expect("non-root node has a parent").index();
            }
            let mut d = depth[cur];
            while let Some(node) = stack.pop() {
                d += 1;
                depth[node] = d;
                on_stack[node] = false;
            }
        }

        let mut children = vec![Vec::new(); len];
        for (i, p) in parent.iter().enumerate().skip(1) {
            let p = p.expect("checked above");
            children[p.index()].push(NodeId::from_index(i));
        }
        for (i, ch) in children.iter().enumerate() {
            if ch.len() == 1 {
                return Err(Error::SingleChild(NodeId::from_index(i)));
            }
        }

        let mut by_depth: Vec<usize> = (0..len).collect();
        by_depth.sort_by_key(|&i| std::cmp::Reverse(depth[i]));
        let mut height = vec![0usize; len];
        for &i in &by_depth {
            if let Some(p) = parent[i] {
                height[p.index()] = height[p.index()].max(height[i] + 1);
            }
        }

        let actions: Vec<NodeId> = (0..len)
            .filter(|&i| children[i].is_empty())
            .map(NodeId::from_index)
            .collect();
        if actions.len() < 2 {
            return Err(Error::TooFewLeaves);
        }
        let mut action_index = vec![None; len];
        for (k, a) in actions.iter().enumerate() {
            action_index[a.index()] = Some(k);
        }

        // Height-descending order guarantees parents precede children, also
        // for unbalanced trees.
        let mut top_down: Vec<NodeId> = (0..len).map(NodeId::from_index).collect();
        top_down.sort_by_key(|id| (std::cmp::Reverse(height[id.index()]), id.0));
        debug_assert!(top_down[0].is_root());

        let branching = children.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Hierarchy {
            parent,
            children,
            height,
            depth,
            actions,
            action_index,
            top_down,
            branching,
        })
    }

    /// Balanced `b`-ary tree of height `h`, numbered breadth-first: the
    /// children of node `i` are `b(i-1)+2 ..= b(i-1)+b+1`.
    pub fn balanced(b: usize, h: usize) -> Result<Self> {
        if b < 2 {
            return Err(Error::InvalidArgument(format!(
                "branching factor must be at least 2, got {b}"
            )));
        }
        if h < 1 {
            return Err(Error::InvalidArgument("tree height must be at least 1".into()));
        }
        let internal: usize = (0..h).map(|l| b.pow(l as u32)).sum();
        let mut parents = BTreeMap::new();
        for i in 1..=internal {
            for k in 0..b {
                parents.insert(NodeId(b * (i - 1) + 2 + k), NodeId(i));
            }
        }
        Self::from_parents(&parents)
    }

    /// Two-level tree: root plus `k` leaves numbered `2..=k+1`.
    pub fn flat(k: usize) -> Result<Self> {
        Self::layered(&[k])
    }

    /// Tree whose nodes at depth `l` all have `fanouts[l]` children, numbered
    /// breadth-first.
    pub fn layered(fanouts: &[usize]) -> Result<Self> {
        let mut parents = BTreeMap::new();
        let mut level = vec![NodeId::ROOT];
        let mut next = 2;
        for &fan in fanouts {
            let mut below = Vec::new();
            for &p in &level {
                for _ in 0..fan {
                    parents.insert(NodeId(next), p);
                    below.push(NodeId(next));
                    next += 1;
                }
            }
            level = below;
        }
        Self::from_parents(&parents)
    }

    /// Number of nodes `|V|`.
    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = NodeId> + '_ {
        (0..self.len()).map(NodeId::from_index)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.0 >= 1 && id.0 <= self.len()
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(Error::UnknownNode(id))
        }
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.parent[id.index()]
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id.index()]
    }

    pub fn node_height(&self, id: NodeId) -> usize {
        self.height[id.index()]
    }

    /// Distance from the root.
    pub fn depth(&self, id: NodeId) -> usize {
        self.depth[id.index()]
    }

    /// Tree height `h`, the height of the root.
    pub fn height(&self) -> usize {
        self.height[0]
    }

    /// Action nodes (leaves) in increasing id order.
    pub fn actions(&self) -> &[NodeId] {
        &self.actions
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    /// Position of `id` in [`Hierarchy::actions`], if it is a leaf.
    pub fn action_index(&self, id: NodeId) -> Option<usize> {
        if self.contains(id) {
            self.action_index[id.index()]
        } else {
            None
        }
    }

    pub fn is_action(&self, id: NodeId) -> bool {
        self.action_index(id).is_some()
    }

    pub(crate) fn require_action(&self, id: NodeId) -> Result<usize> {
        self.check(id)?;
        self.action_index(id).ok_or(Error::NotALeaf(id))
    }

    /// Maximum number of children of any node.
    pub fn branching_factor(&self) -> usize {
        self.branching
    }

    /// Every node with parents before children (root first, then by
    /// decreasing height).
    pub fn top_down(&self) -> &[NodeId] {
        &self.top_down
    }

    /// Nodes from the root down to `id`, inclusive.
    pub fn path_to_root(&self, id: NodeId) -> Result<Vec<NodeId>> {
        self.check(id)?;
        let mut path = Vec::with_capacity(self.depth(id) + 1);
        let mut cur = Some(id);
        while let Some(node) = cur {
            path.push(node);
            cur = self.parent(node);
        }
        path.reverse();
        Ok(path)
    }

    /// Parent map, the inverse of [`Hierarchy::from_parents`].
    pub fn parent_map(&self) -> BTreeMap<NodeId, NodeId> {
        self.nodes().filter_map(|id| self.parent(id).map(|p| (id, p))).collect()
    }

    /// Lowest common ancestor of two nodes.
    pub fn lca(&self, a: NodeId, b: NodeId) -> NodeId {
        let (mut a, mut b) = (a, b);
        while self.depth(a) > self.depth(b) {
            a = self.parent(a).expect("deeper node has a parent");
        }
        while self.depth(b) > self.depth(a) {
            b = self.parent(b).expect("deeper node has a parent");
        }
        while a != b {
            a = self.parent(a).expect("non-root");
            b = self.parent(b).expect("non-root");
        }
        a
    }
}

/// Priors of the K-armed Gaussian hierarchy: root `N(hyper_mean, σ₀₁²)`,
/// every other node `N(parent, σ₀ᵢ²)`, rewards with noise `noise_std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarPrior {
    pub hyper_mean: f64,
    /// Conditional prior variance of each node, indexed by `NodeId::index`.
    pub node_variance: Vec<f64>,
    pub noise_std: f64,
}

impl ScalarPrior {
    pub fn new(tree: &Hierarchy, hyper_mean: f64, node_variance: Vec<f64>, noise_std: f64) -> Result<Self> {
        if node_variance.len() != tree.len() {
            return Err(Error::DimensionMismatch {
                expected: tree.len(),
                got: node_variance.len(),
            });
        }
        if !hyper_mean.is_finite() {
            return Err(Error::InvalidPrior("hyper-prior mean must be finite".into()));
        }
        if let Some((i, v)) = node_variance
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidPrior(format!(
                "variance of node {} must be positive, got {v}",
                NodeId::from_index(i)
            )));
        }
        if !(noise_std.is_finite() && noise_std > 0.0) {
            return Err(Error::InvalidPrior(format!(
                "noise std must be positive, got {noise_std}"
            )));
        }
        Ok(ScalarPrior {
            hyper_mean,
            node_variance,
            noise_std,
        })
    }

    /// Every node has conditional variance `value`.
    pub fn constant(tree: &Hierarchy, value: f64, hyper_mean: f64, noise_std: f64) -> Result<Self> {
        Self::new(tree, hyper_mean, vec![value; tree.len()], noise_std)
    }

    /// Conditional variance doubles with height: `σ₀ᵢ² = 2^{hᵢ}`.
    pub fn doubling(tree: &Hierarchy, hyper_mean: f64, noise_std: f64) -> Result<Self> {
        let v = tree.nodes().map(|id| 2f64.powi(tree.node_height(id) as i32)).collect();
        Self::new(tree, hyper_mean, v, noise_std)
    }

    #[inline]
    pub fn variance(&self, id: NodeId) -> f64 {
        self.node_variance[id.index()]
    }

    #[inline]
    pub fn noise_variance(&self) -> f64 {
        self.noise_std * self.noise_std
    }

    /// `σ₀,max²`, the largest conditional prior variance.
    pub fn max_variance(&self) -> f64 {
        self.node_variance.iter().copied().fold(0.0, f64::max)
    }

    /// Marginal prior variance of action `a`: the sum of conditional variances
    /// on its path to the root.
    pub fn marginal_variance(&self, tree: &Hierarchy, a: NodeId) -> Result<f64> {
        tree.require_action(a)?;
        Ok(tree.path_to_root(a)?.iter().map(|&i| self.variance(i)).sum())
    }
}

/// Priors of the contextual linear hierarchy with `d`-dimensional node
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPrior {
    pub hyper_mean: DVector<f64>,
    node_covariance: Vec<DMatrix<f64>>,
    node_precision: Vec<DMatrix<f64>>,
    pub noise_std: f64,
}

impl LinearPrior {
    pub fn new(
        tree: &Hierarchy,
        hyper_mean: DVector<f64>,
        node_covariance: Vec<DMatrix<f64>>,
        noise_std: f64,
    ) -> Result<Self> {
        let d = hyper_mean.len();
        if d == 0 {
            return Err(Error::InvalidPrior("dimension must be at least 1".into()));
        }
        if node_covariance.len() != tree.len() {
            return Err(Error::DimensionMismatch {
                expected: tree.len(),
                got: node_covariance.len(),
            });
        }
        if hyper_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPrior("hyper-prior mean must be finite".into()));
        }
        let mut node_precision = Vec::with_capacity(tree.len());
        for (i, cov) in node_covariance.iter().enumerate() {
            if cov.nrows() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: cov.nrows(),
                });
            }
            let what = format!("covariance of node {}", NodeId::from_index(i));
            linalg::check_covariance(cov, &what)?;
            node_precision.push(linalg::spd_inverse(cov).map_err(|e| Error::InvalidPrior(format!("{what}: {e}")))?);
        }
        if !(noise_std.is_finite() && noise_std > 0.0) {
            return Err(Error::InvalidPrior(format!(
                "noise std must be positive, got {noise_std}"
            )));
        }
        Ok(LinearPrior {
            hyper_mean,
            node_covariance,
            node_precision,
            noise_std,
        })
    }

    /// Isotropic covariances `σ₀ᵢ² I` taken from a scalar prior.
    pub fn isotropic(tree: &Hierarchy, scalar: &ScalarPrior, d: usize) -> Result<Self> {
        let mean = DVector::from_element(d, scalar.hyper_mean);
        let cov = scalar
            .node_variance
            .iter()
            .map(|&v| DMatrix::identity(d, d) * v)
            .collect();
        Self::new(tree, mean, cov, scalar.noise_std)
    }

    pub fn dim(&self) -> usize {
        self.hyper_mean.len()
    }

    pub fn covariance(&self, id: NodeId) -> &DMatrix<f64> {
        &self.node_covariance[id.index()]
    }

    pub fn precision(&self, id: NodeId) -> &DMatrix<f64> {
        &self.node_precision[id.index()]
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.node_covariance
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_std * self.noise_std
    }

    /// Sum of conditional covariances on the path from action `a` to the root.
    pub fn marginal_covariance(&self, tree: &Hierarchy, a: NodeId) -> Result<DMatrix<f64>> {
        tree.require_action(a)?;
        let d = self.dim();
        Ok(tree
            .path_to_root(a)?
            .iter()
            .fold(DMatrix::zeros(d, d), |acc, &i| acc + self.covariance(i)))
    }
}

/// Either flavour of prior.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    Scalar(ScalarPrior),
    Linear(LinearPrior),
}

impl PriorSpec {
    pub fn dim(&self) -> usize {
        match self {
            PriorSpec::Scalar(_) => 1,
            PriorSpec::Linear(p) => p.dim(),
        }
    }

    pub fn noise_std(&self) -> f64 {
        match self {
            PriorSpec::Scalar(p) => p.noise_std,
            PriorSpec::Linear(p) => p.noise_std,
        }
    }
}

/// Marginal prior variance of action node `a` (sum of conditional prior
/// variances along its path, root included).
pub fn marginal_prior_variance(tree: &Hierarchy, a: NodeId, prior: &ScalarPrior) -> Result<f64> {
    prior.marginal_variance(tree, a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanValue {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VarianceValue {
    Scalar(f64),
    /// Row-major nested arrays.
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorFile {
    pub hyper_mean: MeanValue,
    pub node_variance: BTreeMap<usize, VarianceValue>,
    pub noise_std: f64,
}

/// JSON tree file:
///
/// ```json
/// {"parents": {"2": 1, "3": 1},
///  "prior": {"hyper_mean": 0.0, "node_variance": {"1": 1.0, "2": 1.0, "3": 1.0}, "noise_std": 1.0},
///  "label_map": {"cat": 2, "dog": 3}}
/// ```
///
/// `prior` and `label_map` are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeFile {
    pub parents: BTreeMap<usize, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<BTreeMap<String, usize>>,
}

impl TreeFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_parts(tree: &Hierarchy, prior: Option<&PriorSpec>) -> Self {
        let parents = tree.parent_map().into_iter().map(|(c, p)| (c.0, p.0)).collect();
        let prior = prior.map(|prior| match prior {
            PriorSpec::Scalar(p) => PriorFile {
                hyper_mean: MeanValue::Scalar(p.hyper_mean),
                node_variance: tree
                    .nodes()
                    .map(|id| (id.0, VarianceValue::Scalar(p.variance(id))))
                    .collect(),
                noise_std: p.noise_std,
            },
            PriorSpec::Linear(p) => PriorFile {
                hyper_mean: MeanValue::Vector(p.hyper_mean.iter().copied().collect()),
                node_variance: tree
                    .nodes()
                    .map(|id| {
                        let m = p.covariance(id);
                        let rows = (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect();
                        (id.0, VarianceValue::Matrix(rows))
                    })
                    .collect(),
                noise_std: p.noise_std,
            },
        });
        TreeFile {
            parents,
            prior,
            label_map: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree file serializes")
    }

    pub fn hierarchy(&self) -> Result<Hierarchy> {
        let parents = self.parents.iter().map(|(&c, &p)| (NodeId(c), NodeId(p))).collect();
        Hierarchy::from_parents(&parents)
    }

    /// Resolves the prior section against `tree`; `None` when absent.
    pub fn prior(&self, tree: &Hierarchy) -> Result<Option<PriorSpec>> {
        let Some(file) = &self.prior else {
            return Ok(None);
        };
        for &id in file.node_variance.keys() {
            if !tree.contains(NodeId(id)) {
                return Err(Error::UnknownNode(NodeId(id)));
            }
        }
        let entry = |id: NodeId| {
            file.node_variance
                .get(&id.0)
                .ok_or_else(|| Error::InvalidPrior(format!("missing variance for node {id}")))
        };
        match &file.hyper_mean {
            MeanValue::Scalar(mean) => {
                let mut v = Vec::with_capacity(tree.len());
                for id in tree.nodes() {
                    match entry(id)? {
                        VarianceValue::Scalar(x) => v.push(*x),
                        VarianceValue::Matrix(_) => {
                            return Err(Error::InvalidPrior(format!(
                                "node {id} has a matrix variance but the hyper-prior mean is scalar"
                            )))
                        }
                    }
                }
                Ok(Some(PriorSpec::Scalar(ScalarPrior::new(
                    tree,
                    *mean,
                    v,
                    file.noise_std,
                )?)))
            }
            MeanValue::Vector(mean) => {
                let d = mean.len();
                let mut covs = Vec::with_capacity(tree.len());
                for id in tree.nodes() {
                    let m = match entry(id)? {
                        VarianceValue::Matrix(rows) => {
                            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                                return Err(Error::InvalidPrior(format!("covariance of node {id} must be {d}x{d}")));
                            }
                            DMatrix::from_row_iterator(d, d, rows.iter().flatten().copied())
                        }
                        VarianceValue::Scalar(x) => DMatrix::identity(d, d) * *x,
                    };
                    covs.push(m);
                }
                Ok(Some(PriorSpec::Linear(LinearPrior::new(
                    tree,
                    DVector::from_vec(mean.clone()),
                    covs,
                    file.noise_std,
                )?)))
            }
        }
    }
}
