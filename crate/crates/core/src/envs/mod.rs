//! Bandit environments: problem instances drawn from the generative model,
//! reward simulation and context streams.

pub mod dataset;

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, NodeId, PriorSpec};
use crate::linalg;
use crate::rng::Rng;

pub use dataset::{
    fit_priors_from_data, generate_cluster_dataset, load_feature_dataset, write_feature_csv, ClusterSpec,
    FeatureDataset, FeatureRecord, FitOptions, FitReport, FittedProblem, Split,
};

/// A problem instance `Θ_*`.
///
/// Sampled instances know every node parameter. Instances built from data
/// only know the action parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    tree: Arc<Hierarchy>,
    dim: usize,
    noise_std: f64,
    /// Node-major parameters of every node, when known.
    nodes: Option<Vec<f64>>,
    /// Action parameters in `tree.actions()` order.
    actions: Vec<f64>,
}

impl Instance {
    /// Instance from node-major parameters of every node.
    pub fn from_nodes(tree: Arc<Hierarchy>, dim: usize, nodes: Vec<f64>, noise_std: f64) -> Result<Self> {
        if nodes.len() != tree.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: tree.len() * dim,
                got: nodes.len(),
            });
        }
        let actions = tree
            .actions()
            .iter()
            .flat_map(|a| nodes[a.index() * dim..(a.index() + 1) * dim].iter().copied())
            .collect();
        Ok(Instance {
            tree,
            dim,
            noise_std,
            nodes: Some(nodes),
            actions,
        })
    }

    /// Instance from action parameters only, in `tree.actions()` order.
    pub fn from_actions(tree: Arc<Hierarchy>, dim: usize, actions: Vec<f64>, noise_std: f64) -> Result<Self> {
        if actions.len() != tree.num_actions() * dim {
            return Err(Error::DimensionMismatch {
                expected: tree.num_actions() * dim,
                got: actions.len(),
            });
        }
        if actions.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("action parameters must be finite".into()));
        }
        Ok(Instance {
            tree,
            dim,
            noise_std,
            nodes: None,
            actions,
        })
    }

    pub fn tree(&self) -> &Arc<Hierarchy> {
        &self.tree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Parameter of any node, if known.
    pub fn node(&self, id: NodeId) -> Option<&[f64]> {
        let d = self.dim;
        self.nodes.as_ref().map(|v| &v[id.index() * d..(id.index() + 1) * d])
    }

    /// Parameter of the `k`-th action.
    pub fn action(&self, k: usize) -> &[f64] {
        &self.actions[k * self.dim..(k + 1) * self.dim]
    }

    /// Mean reward `xᵀθ_{*,a}` of every action, in action order.
    pub fn mean_rewards(&self, context: &[f64]) -> Vec<f64> {
        (0..self.tree.num_actions())
            .map(|k| dot(self.action(k), context))
            .collect()
    }

    pub fn mean_reward(&self, action: NodeId, context: &[f64]) -> Result<f64> {
        let k = self.tree.require_action(action)?;
        Ok(dot(self.action(k), context))
    }

    /// Optimal action and its mean reward. Ties go to the lowest index.
    pub fn best(&self, context: &[f64]) -> (NodeId, f64) {
        let means = self.mean_rewards(context);
        let k = crate::agents::argmax(&means);
        (self.tree.actions()[k], means[k])
    }

    /// Draw a reward `N(xᵀθ_{*,a}, σ²)`.
    pub fn step(&self, action: NodeId, context: &[f64], rng: &mut Rng) -> Result<f64> {
        if context.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: context.len(),
            });
        }
        let mean = self.mean_reward(action, context)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(mean + self.noise_std * z)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draw `Θ_*` from the generative model, root first.
pub fn sample_instance(tree: &Arc<Hierarchy>, prior: &PriorSpec, rng: &mut Rng) -> Result<Instance> {
    match prior {
        PriorSpec::Scalar(p) => {
            let mut v = vec![0.0; tree.len()];
            for &id in tree.top_down() {
                let base = tree.parent(id).map_or(p.hyper_mean, |q| v[q.index()]);
                let z: f64 = rng.sample(StandardNormal);
                v[id.index()] = base + p.variance(id).sqrt() * z;
            }
            Instance::from_nodes(Arc::clone(tree), 1, v, p.noise_std)
        }
        PriorSpec::Linear(p) => {
            let d = p.dim();
            let factors = tree
                .nodes()
                .map(|id| linalg::spd_factor(p.covariance(id)).map(|c| c.l()))
                .collect::<Result<Vec<_>>>()?;
            let mut v = vec![0.0; tree.len() * d];
            for &id in tree.top_down() {
                let base = match tree.parent(id) {
                    Some(q) => DVector::from_column_slice(&v[q.index() * d..(q.index() + 1) * d]),
                    None => p.hyper_mean.clone(),
                };
                let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let theta = base + &factors[id.index()] * z;
                v[id.index() * d..(id.index() + 1) * d].copy_from_slice(theta.as_slice());
            }
            Instance::from_nodes(Arc::clone(tree), d, v, p.noise_std)
        }
    }
}

/// Where contexts `X_t` come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextSource {
    /// K-armed bandit: the context is always `1`.
    Constant,
    /// Uniform on the unit sphere in `R^d`.
    UnitSphere(usize),
    /// Uniform over a fixed pool of context vectors.
    Pool(Arc<Vec<Vec<f64>>>),
}

impl ContextSource {
    pub fn dim(&self) -> usize {
        match self {
            ContextSource::Constant => 1,
            ContextSource::UnitSphere(d) => *d,
            ContextSource::Pool(p) => p.first().map_or(0, Vec::len),
        }
    }

    pub fn next(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            ContextSource::Constant => vec![1.0],
            ContextSource::UnitSphere(d) => loop {
                let x: Vec<f64> = (0..*d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    break x.into_iter().map(|v| v / norm).collect();
                }
            },
            ContextSource::Pool(p) => p[rng.random_range(0..p.len())].clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{LinearPrior, ScalarPrior};
    use crate::rng::{stream, StreamTag};

    fn rng() -> Rng {
        stream(5, 0, StreamTag::Instance)
    }

    #[test]
    fn degenerate_prior_gives_hyper_mean() {
        let tree = Arc::new(Hierarchy::balanced(2, 2).unwrap());
        let prior = PriorSpec::Scalar(ScalarPrior::constant(&tree, 1e-300, 0.7, 1.0).unwrap());
        let inst = sample_instance(&tree, &prior, &mut rng()).unwrap();
        for id in tree.nodes() {
            assert!((inst.node(id).unwrap()[0] - 0.7).abs() < 1e-140);
        }
    }

    #[test]
    fn noiseless_step_returns_mean() {
        let tree = Arc::new(Hierarchy::flat(3).unwrap());
        let inst = Instance::from_actions(Arc::clone(&tree), 1, vec![0.1, 0.5, 0.2], 0.0).unwrap();
        let r = inst.step(NodeId(3), &[1.0], &mut rng()).unwrap();
        assert_eq!(r, 0.5);
        assert_eq!(inst.best(&[1.0]), (NodeId(3), 0.5));
        assert!(matches!(
            inst.step(NodeId(1), &[1.0], &mut rng()),
            Err(Error::NotALeaf(_))
        ));
        assert!(inst.step(NodeId(2), &[1.0, 0.0], &mut rng()).is_err());
    }

    #[test]
    fn scalar_and_unit_linear_agree() {
        let tree = Arc::new(Hierarchy::balanced(2, 2).unwrap());
        let scalar = ScalarPrior::doubling(&tree, 0.0, 1.0).unwrap();
        let linear = LinearPrior::isotropic(&tree, &scalar, 1).unwrap();
        let a = sample_instance(&tree, &PriorSpec::Scalar(scalar), &mut rng()).unwrap();
        let b = sample_instance(&tree, &PriorSpec::Linear(linear), &mut rng()).unwrap();
        for id in tree.nodes() {
            assert!((a.node(id).unwrap()[0] - b.node(id).unwrap()[0]).abs() < 1e-12);
        }
        let ra = a.step(NodeId(4), &[1.0], &mut rng()).unwrap();
        let rb = b.step(NodeId(4), &[1.0], &mut rng()).unwrap();
        assert!((ra - rb).abs() < 1e-12);
    }

    #[test]
    fn unit_sphere_contexts() {
        let src = ContextSource::UnitSphere(4);
        let mut r = rng();
        for _ in 0..100 {
            let x = src.next(&mut r);
            let n: f64 = x.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert_eq!(ContextSource::Constant.next(&mut r), vec![1.0]);
    }
}
