//! Dense joint Gaussian over every node parameter.
//!
//! This is the brute-force reference for the recursive posteriors: the prior
//! covariance of the stacked parameter vector is built from lowest common
//! ancestors and observations are absorbed by rank-1 Gaussian conditioning.
//! It costs `O((d|V|)²)` per observation and is only used for verification.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, LinearPrior, NodeId, PriorSpec, ScalarPrior};
use crate::linalg;
use crate::posterior::SamplingCost;
use crate::rng::Rng;

/// One observation `y = xᵀθ_a + ε`. K-armed observations use `x = [1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub action: NodeId,
    pub context: Vec<f64>,
    pub reward: f64,
}

impl Observation {
    pub fn scalar(action: NodeId, reward: f64) -> Self {
        Observation {
            action,
            context: vec![1.0],
            reward,
        }
    }
}

/// Gaussian over the stacked `d·|V|` node parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussian {
    dim: usize,
    /// Block position of each node, indexed by `NodeId::index`.
    position: Vec<usize>,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl JointGaussian {
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn offset(&self, id: NodeId) -> usize {
        self.position[id.index()] * self.dim
    }

    pub fn node_mean(&self, id: NodeId) -> DVector<f64> {
        self.mean.rows(self.offset(id), self.dim).into_owned()
    }

    pub fn node_covariance(&self, id: NodeId) -> DMatrix<f64> {
        let o = self.offset(id);
        self.covariance.view((o, o), (self.dim, self.dim)).into_owned()
    }

    pub fn cross_covariance(&self, a: NodeId, b: NodeId) -> DMatrix<f64> {
        self.covariance
            .view((self.offset(a), self.offset(b)), (self.dim, self.dim))
            .into_owned()
    }

    /// Same distribution with node blocks stacked in `order`.
    pub fn permuted(&self, order: &[NodeId]) -> JointGaussian {
        let d = self.dim;
        let n = order.len();
        let mut position = vec![0; n];
        for (pos, id) in order.iter().enumerate() {
            position[id.index()] = pos;
        }
        let src = |pos: usize| self.offset(order[pos / d]) + pos % d;
        let mean = DVector::from_fn(n * d, |r, _| self.mean[src(r)]);
        let covariance = DMatrix::from_fn(n * d, n * d, |r, c| self.covariance[(src(r), src(c))]);
        JointGaussian {
            dim: d,
            position,
            mean,
            covariance,
        }
    }
}

/// Prior of the stacked parameters: every node has mean `μ₁` and
/// `Cov(θᵢ, θⱼ)` is the sum of conditional covariances on the path from the
/// root to `lca(i, j)`.
pub fn joint_prior(tree: &Hierarchy, prior: &PriorSpec) -> JointGaussian {
    match prior {
        PriorSpec::Scalar(p) => joint_prior_scalar(tree, p),
        PriorSpec::Linear(p) => joint_prior_linear(tree, p),
    }
}

pub fn joint_prior_scalar(tree: &Hierarchy, prior: &ScalarPrior) -> JointGaussian {
    let covs: Vec<DMatrix<f64>> = prior
        .node_variance
        .iter()
        .map(|&v| DMatrix::from_element(1, 1, v))
        .collect();
    build_prior(tree, &DVector::from_element(1, prior.hyper_mean), &covs)
}

pub fn joint_prior_linear(tree: &Hierarchy, prior: &LinearPrior) -> JointGaussian {
    build_prior(tree, &prior.hyper_mean, prior.covariances())
}

fn build_prior(tree: &Hierarchy, hyper_mean: &DVector<f64>, covs: &[DMatrix<f64>]) -> JointGaussian {
    let d = hyper_mean.len();
    let n = tree.len();
    // Cumulative covariance from the root down to each node.
    let mut path_cov = vec![DMatrix::zeros(d, d); n];
    for &id in tree.top_down() {
        let base = match tree.parent(id) {
            Some(p) => path_cov[p.index()].clone(),
            None => DMatrix::zeros(d, d),
        };
        path_cov[id.index()] = base + &covs[id.index()];
    }
    let mut covariance = DMatrix::zeros(n * d, n * d);
    for a in tree.nodes() {
        for b in tree.nodes() {
            let block = &path_cov[tree.lca(a, b).index()];
            covariance
                .view_mut((a.index() * d, b.index() * d), (d, d))
                .copy_from(block);
        }
    }
    let mean = DVector::from_fn(n * d, |r, _| hyper_mean[r % d]);
    JointGaussian {
        dim: d,
        position: (0..n).collect(),
        mean,
        covariance,
    }
}

fn check_observation(joint: &JointGaussian, obs: &Observation) -> Result<()> {
    if obs.action.0 == 0 || obs.action.index() >= joint.position.len() {
        return Err(Error::UnknownNode(obs.action));
    }
    if obs.context.len() != joint.dim {
        return Err(Error::DimensionMismatch {
            expected: joint.dim,
            got: obs.context.len(),
        });
    }
    Ok(())
}

/// Conditions on `observations` one at a time (rank-1 updates).
pub fn condition(joint: &JointGaussian, observations: &[Observation], sigma_sq: f64) -> Result<JointGaussian> {
    let mut out = joint.clone();
    for obs in observations {
        condition_in_place(&mut out, obs, sigma_sq)?;
    }
    Ok(out)
}

/// Absorbs a single observation.
pub fn condition_in_place(joint: &mut JointGaussian, obs: &Observation, sigma_sq: f64) -> Result<()> {
    check_observation(joint, obs)?;
    let d = joint.dim;
    let o = joint.offset(obs.action);
    let x = DVector::from_column_slice(&obs.context);
    // u = Σ hᵀ where h has x in the acting block.
    let u = joint.covariance.columns(o, d) * &x;
    let innovation = x.dot(&u.rows(o, d)) + sigma_sq;
    if innovation.is_nan() || innovation <= 0.0 {
        return Err(Error::IllConditioned(f64::INFINITY));
    }
    let predicted = x.dot(&joint.mean.rows(o, d));
    joint.mean.axpy((obs.reward - predicted) / innovation, &u, 1.0);
    joint.covariance.ger(-1.0 / innovation, &u, &u, 1.0);
    linalg::symmetrize(&mut joint.covariance);
    Ok(())
}

/// Conditions on all observations at once through the block update
/// `K = ΣHᵀ(HΣHᵀ + σ²I)⁻¹`.
pub fn condition_batch(joint: &JointGaussian, observations: &[Observation], sigma_sq: f64) -> Result<JointGaussian> {
    if observations.is_empty() {
        return Ok(joint.clone());
    }
    let d = joint.dim;
    let total = joint.mean.len();
    let m = observations.len();
    let mut h = DMatrix::zeros(m, total);
    let mut y = DVector::zeros(m);
    for (r, obs) in observations.iter().enumerate() {
        check_observation(joint, obs)?;
        let o = joint.offset(obs.action);
        for k in 0..d {
            h[(r, o + k)] = obs.context[k];
        }
        y[r] = obs.reward;
    }
    let sh = &joint.covariance * h.transpose();
    let s = &h * &sh + DMatrix::identity(m, m) * sigma_sq;
    let chol = linalg::spd_factor(&s)?;
    let innovation = y - &h * &joint.mean;
    let mean = &joint.mean + &sh * chol.solve(&innovation);
    let mut covariance = &joint.covariance - &sh * chol.solve(&sh.transpose());
    linalg::symmetrize(&mut covariance);
    Ok(JointGaussian {
        dim: d,
        position: joint.position.clone(),
        mean,
        covariance,
    })
}

/// Mean and covariance of each action node, in [`Hierarchy::actions`] order.
pub fn action_marginals(tree: &Hierarchy, joint: &JointGaussian) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    tree.actions()
        .iter()
        .map(|&a| (joint.node_mean(a), joint.node_covariance(a)))
        .collect()
}

/// Mean and covariance of the stacked action parameters `Θ_A`.
pub fn action_block(tree: &Hierarchy, joint: &JointGaussian) -> (DVector<f64>, DMatrix<f64>) {
    let d = joint.dim;
    let k = tree.num_actions();
    let src = |pos: usize| joint.offset(tree.actions()[pos / d]) + pos % d;
    let mean = DVector::from_fn(k * d, |r, _| joint.mean[src(r)]);
    let cov = DMatrix::from_fn(k * d, k * d, |r, c| joint.covariance[(src(r), src(c))]);
    (mean, cov)
}

/// Lower Cholesky factor, counting floating-point operations.
pub fn counted_cholesky(m: &DMatrix<f64>, cost: &mut SamplingCost) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        cost.flops += 2 * j as u64 + 1;
        if diag.is_nan() || diag <= 0.0 {
            return Err(Error::IllConditioned(f64::INFINITY));
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut v = m[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
            cost.flops += 2 * j as u64 + 1;
        }
    }
    Ok(l)
}

/// Draws `Θ_A` directly from the joint action posterior by factorizing its
/// `Kd × Kd` covariance: the `O(K³)` sampler.
pub fn sample_actions(
    tree: &Hierarchy,
    joint: &JointGaussian,
    rng: &mut Rng,
    cost: &mut SamplingCost,
) -> Result<DVector<f64>> {
    let (mean, cov) = action_block(tree, joint);
    let l = counted_cholesky(&cov, cost)?;
    let n = mean.len();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    cost.normal_draws += n as u64;
    cost.flops += (n * (n + 1)) as u64;
    Ok(mean + l * z)
}
