//! Contextual linear hierarchy: `d`-dimensional node parameters with
//! rewards `N(xᵀθ_a, σ²)`.
//!
//! Messages are propagated in Woodbury precision form. With `M` the precision
//! of a node's data summary, `b` its weighted mean and `Λ₀` the node's prior
//! precision, the upward message is
//!
//! ```text
//! Λ̃   = M − M (M + Λ₀)⁻¹ M  = Λ₀ (M + Λ₀)⁻¹ M
//! Λ̃θ̃ = Λ₀ (M + Λ₀)⁻¹ b
//! ```
//!
//! which equals `(Σ₀ + M⁻¹)⁻¹` whenever `M` is invertible, and stays defined
//! for the rank-deficient Gram matrices seen before `d` observations.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{ModelSample, SamplingCost};
use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, LinearPrior, NodeId};
use crate::linalg;
use crate::rng::Rng;

/// Scaled Gram statistics of one action node: `G = σ⁻² Σ xxᵀ` and
/// `σ⁻² Σ x y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafGram {
    pub gram: DMatrix<f64>,
    pub xy_sum: DVector<f64>,
    pub count: u64,
}

impl LeafGram {
    pub fn zeros(d: usize) -> Self {
        LeafGram {
            gram: DMatrix::zeros(d, d),
            xy_sum: DVector::zeros(d),
            count: 0,
        }
    }

    pub fn push(&mut self, context: &DVector<f64>, reward: f64, sigma_sq: f64) {
        self.gram.ger(1.0 / sigma_sq, context, context, 1.0);
        self.xy_sum.axpy(reward / sigma_sq, context, 1.0);
        self.count += 1;
    }

    pub fn as_message(&self) -> NodeMessageVec {
        NodeMessageVec {
            precision: self.gram.clone(),
            weighted_mean: self.xy_sum.clone(),
        }
    }
}

/// Gaussian likelihood `exp(-½ (θ-m)ᵀ Λ (θ-m))` kept as `(Λ, Λm)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMessageVec {
    pub precision: DMatrix<f64>,
    pub weighted_mean: DVector<f64>,
}

impl NodeMessageVec {
    pub fn zeros(d: usize) -> Self {
        NodeMessageVec {
            precision: DMatrix::zeros(d, d),
            weighted_mean: DVector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.weighted_mean.len()
    }

    pub fn is_zero(&self) -> bool {
        self.precision.iter().all(|&v| v == 0.0) && self.weighted_mean.iter().all(|&v| v == 0.0)
    }

    fn accumulate(&mut self, other: &NodeMessageVec) {
        self.precision += &other.precision;
        self.weighted_mean += &other.weighted_mean;
    }
}

fn integrate(data: &NodeMessageVec, prior_precision: &DMatrix<f64>) -> Result<NodeMessageVec> {
    let d = data.dim();
    if prior_precision.nrows() != d {
        return Err(Error::DimensionMismatch {
            expected: prior_precision.nrows(),
            got: d,
        });
    }
    if data.is_zero() {
        return Ok(NodeMessageVec::zeros(d));
    }
    let chol = linalg::spd_factor(&(&data.precision + prior_precision))?;
    let mut precision = prior_precision * chol.solve(&data.precision);
    linalg::symmetrize(&mut precision);
    let weighted_mean = prior_precision * chol.solve(&data.weighted_mean);
    Ok(NodeMessageVec {
        precision,
        weighted_mean,
    })
}

fn prior_precision(sigma0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::check_covariance(sigma0, "prior covariance")?;
    linalg::spd_inverse(sigma0)
}

/// Upward message of an action node, `Σ̃ = Σ₀ + G⁻¹`, in Woodbury form.
pub fn leaf_message_linear(gram: &LeafGram, sigma0: &DMatrix<f64>) -> Result<NodeMessageVec> {
    integrate(&gram.as_message(), &prior_precision(sigma0)?)
}

/// Upward message of an internal node, `Σ̃ = Σ₀ + M⁻¹` with `M = Σ Λ̃ₖ`.
pub fn internal_message_linear(child_messages: &[NodeMessageVec], sigma0: &DMatrix<f64>) -> Result<NodeMessageVec> {
    let first = child_messages.first().ok_or(Error::EmptyChildren)?;
    let mut acc = NodeMessageVec::zeros(first.dim());
    for m in child_messages {
        if m.dim() != first.dim() {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                got: m.dim(),
            });
        }
        acc.accumulate(m);
    }
    integrate(&acc, &prior_precision(sigma0)?)
}

/// Conditional posterior `N(gain·θ_parent + intercept, covariance)` of a node.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParamsVec {
    /// `Λ̂ = Λ₀ + Σ Λ̃ⱼ`.
    pub precision: DMatrix<f64>,
    /// `Σ̂ = Λ̂⁻¹`.
    pub covariance: DMatrix<f64>,
    /// `Σ̂ Λ₀`.
    pub gain: DMatrix<f64>,
    /// `Σ̂ Σ Λ̃ⱼθ̃ⱼ`.
    pub intercept: DVector<f64>,
    /// Upper Cholesky factor `U` with `Λ̂ = UᵀU`; `U⁻¹z` has covariance `Σ̂`.
    upper: DMatrix<f64>,
}

impl PosteriorParamsVec {
    fn from_data(data: &NodeMessageVec, prior_precision: &DMatrix<f64>) -> Result<Self> {
        let mut precision = prior_precision + &data.precision;
        linalg::symmetrize(&mut precision);
        let chol = linalg::spd_factor(&precision)?;
        let mut covariance = chol.inverse();
        linalg::symmetrize(&mut covariance);
        let gain = chol.solve(prior_precision);
        let intercept = chol.solve(&data.weighted_mean);
        let upper = chol.l().transpose();
        Ok(PosteriorParamsVec {
            precision,
            covariance,
            gain,
            intercept,
            upper,
        })
    }

    pub fn mean(&self, parent_value: &DVector<f64>) -> DVector<f64> {
        &self.gain * parent_value + &self.intercept
    }

    fn draw(&self, mean: DVector<f64>, rng: &mut Rng, cost: &mut SamplingCost) -> DVector<f64> {
        let d = mean.len();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let offset = self
            .upper
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        cost.normal_draws += d as u64;
        cost.flops += (d * d) as u64;
        mean + offset
    }
}

/// Posterior of a node given its parent from its children's messages (for a
/// leaf, pass [`LeafGram::as_message`]).
pub fn node_posterior_linear(child_messages: &[NodeMessageVec], sigma0: &DMatrix<f64>) -> Result<PosteriorParamsVec> {
    let d = sigma0.nrows();
    let mut acc = NodeMessageVec::zeros(d);
    for m in child_messages {
        if m.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: m.dim(),
            });
        }
        acc.accumulate(m);
    }
    PosteriorParamsVec::from_data(&acc, &prior_precision(sigma0)?)
}

/// Posterior state of the contextual linear hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPosterior {
    tree: Arc<Hierarchy>,
    prior: Arc<LinearPrior>,
    grams: Vec<LeafGram>,
    data: Vec<NodeMessageVec>,
    up: Vec<NodeMessageVec>,
    conditionals: Vec<PosteriorParamsVec>,
}

impl LinearPosterior {
    pub fn new(tree: Arc<Hierarchy>, prior: Arc<LinearPrior>) -> Result<Self> {
        if prior.covariances().len() != tree.len() {
            return Err(Error::DimensionMismatch {
                expected: tree.len(),
                got: prior.covariances().len(),
            });
        }
        let d = prior.dim();
        let n = tree.len();
        let zero = NodeMessageVec::zeros(d);
        let conditionals = tree
            .nodes()
            .map(|id| PosteriorParamsVec::from_data(&zero, prior.precision(id)))
            .collect::<Result<_>>()?;
        Ok(LinearPosterior {
            grams: vec![LeafGram::zeros(d); n],
            data: vec![zero.clone(); n],
            up: vec![zero; n],
            conditionals,
            tree,
            prior,
        })
    }

    /// State holding `grams` (indexed like [`Hierarchy::actions`]), computed
    /// bottom-up from scratch.
    pub fn from_grams(tree: Arc<Hierarchy>, prior: Arc<LinearPrior>, grams: &[LeafGram]) -> Result<Self> {
        let mut state = Self::new(tree, prior)?;
        if grams.len() != state.tree.num_actions() {
            return Err(Error::DimensionMismatch {
                expected: state.tree.num_actions(),
                got: grams.len(),
            });
        }
        for (k, g) in grams.iter().enumerate() {
            if g.xy_sum.len() != state.dim() {
                return Err(Error::DimensionMismatch {
                    expected: state.dim(),
                    got: g.xy_sum.len(),
                });
            }
            let a = state.tree.actions()[k];
            state.grams[a.index()] = g.clone();
        }
        let tree = Arc::clone(&state.tree);
        for &id in tree.top_down().iter().rev() {
            state.refresh(id)?;
        }
        Ok(state)
    }

    pub fn rebuild(&self) -> Result<Self> {
        let grams: Vec<LeafGram> = self
            .tree
            .actions()
            .iter()
            .map(|a| self.grams[a.index()].clone())
            .collect();
        Self::from_grams(Arc::clone(&self.tree), Arc::clone(&self.prior), &grams)
    }

    pub fn tree(&self) -> &Arc<Hierarchy> {
        &self.tree
    }

    pub fn prior(&self) -> &Arc<LinearPrior> {
        &self.prior
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn leaf_gram(&self, a: NodeId) -> &LeafGram {
        &self.grams[a.index()]
    }

    pub fn message(&self, id: NodeId) -> &NodeMessageVec {
        &self.up[id.index()]
    }

    pub fn data_message(&self, id: NodeId) -> &NodeMessageVec {
        &self.data[id.index()]
    }

    pub fn conditional(&self, id: NodeId) -> &PosteriorParamsVec {
        &self.conditionals[id.index()]
    }

    fn refresh(&mut self, id: NodeId) -> Result<()> {
        let i = id.index();
        let data = if self.tree.is_action(id) {
            self.grams[i].as_message()
        } else {
            let mut acc = NodeMessageVec::zeros(self.dim());
            for &c in self.tree.children(id) {
                acc.accumulate(&self.up[c.index()]);
            }
            linalg::symmetrize(&mut acc.precision);
            acc
        };
        let up = if id.is_root() {
            NodeMessageVec::zeros(self.dim())
        } else {
            integrate(&data, self.prior.precision(id))?
        };
        let conditional = PosteriorParamsVec::from_data(&data, self.prior.precision(id))?;
        self.data[i] = data;
        self.up[i] = up;
        self.conditionals[i] = conditional;
        Ok(())
    }

    /// Records `(context, reward)` at action node `action` and refreshes its
    /// path to the root.
    pub fn update(&mut self, action: NodeId, context: &[f64], reward: f64) -> Result<()> {
        self.tree.require_action(action)?;
        if context.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: context.len(),
            });
        }
        let x = DVector::from_column_slice(context);
        let sigma_sq = self.prior.noise_variance();
        // Commit only after every path node refreshes successfully.
        let mut next = self.clone();
        next.grams[action.index()].push(&x, reward, sigma_sq);
        let mut cur = Some(action);
        while let Some(id) = cur {
            next.refresh(id)?;
            cur = next.tree.parent(id);
        }
        *self = next;
        Ok(())
    }

    /// Exact marginal posterior mean and covariance of any node.
    pub fn marginal_moments(&self, id: NodeId) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = self.dim();
        let mut mean = self.prior.hyper_mean.clone();
        let mut cov = DMatrix::zeros(d, d);
        for node in self.tree.path_to_root(id)? {
            let p = self.conditional(node);
            mean = p.mean(&mean);
            cov = &p.covariance + &p.gain * cov * p.gain.transpose();
            linalg::symmetrize(&mut cov);
        }
        Ok((mean, cov))
    }

    pub fn marginal_action_moments(&self, a: NodeId) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.tree.require_action(a)?;
        self.marginal_moments(a)
    }

    pub fn sample(&self, rng: &mut Rng) -> ModelSample {
        self.sample_counted(rng, &mut SamplingCost::default())
    }

    pub fn sample_counted(&self, rng: &mut Rng, cost: &mut SamplingCost) -> ModelSample {
        let d = self.dim();
        let mut values = vec![0.0; self.tree.len() * d];
        for &id in self.tree.top_down() {
            let parent_value = match self.tree.parent(id) {
                Some(p) => DVector::from_column_slice(&values[p.index() * d..(p.index() + 1) * d]),
                None => self.prior.hyper_mean.clone(),
            };
            let p = self.conditional(id);
            let mean = p.mean(&parent_value);
            cost.flops += (2 * d * d) as u64;
            let theta = p.draw(mean, rng, cost);
            values[id.index() * d..(id.index() + 1) * d].copy_from_slice(theta.as_slice());
        }
        ModelSample::new(d, values)
    }

    #[doc(hidden)]
    pub fn corrupt_message(&mut self, id: NodeId, delta: f64) -> Result<()> {
        self.data[id.index()].weighted_mean[0] += delta;
        self.conditionals[id.index()] =
            PosteriorParamsVec::from_data(&self.data[id.index()], self.prior.precision(id))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::ScalarPrior;
    use crate::posterior::mab::{self, LeafStats, MabPosterior};
    use crate::rng::{stream, StreamTag};

    fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax()
    }

    #[test]
    fn zero_gram_gives_zero_message() {
        let m = leaf_message_linear(&LeafGram::zeros(3), &DMatrix::identity(3, 3)).unwrap();
        assert!(m.is_zero());
    }

    #[test]
    fn identity_gram_example() {
        let gram = LeafGram {
            gram: DMatrix::identity(2, 2),
            xy_sum: DVector::from_vec(vec![1.0, 0.0]),
            count: 2,
        };
        let m = leaf_message_linear(&gram, &DMatrix::identity(2, 2)).unwrap();
        assert!(max_abs(&m.precision, &(DMatrix::identity(2, 2) * 0.5)) < 1e-15);
        assert!((m.weighted_mean[0] - 0.5).abs() < 1e-15 && m.weighted_mean[1].abs() < 1e-15);
    }

    #[test]
    fn two_half_children_example() {
        let child = NodeMessageVec {
            precision: DMatrix::identity(2, 2) * 0.5,
            weighted_mean: DVector::zeros(2),
        };
        let m = internal_message_linear(&[child.clone(), child], &DMatrix::identity(2, 2)).unwrap();
        assert!(max_abs(&m.precision, &(DMatrix::identity(2, 2) * 0.5)) < 1e-15);
        assert!(internal_message_linear(&[], &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn woodbury_matches_direct_form() {
        let mut rng = stream(3, 0, StreamTag::Auxiliary(0));
        for _ in 0..20 {
            let d = 3;
            let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let sigma0 = &a * a.transpose() + DMatrix::identity(d, d) * 0.3;
            let mut gram = LeafGram::zeros(d);
            for _ in 0..5 {
                let x = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                gram.push(&x, rng.sample(StandardNormal), 0.7);
            }
            let m = leaf_message_linear(&gram, &sigma0).unwrap();
            let direct = linalg::spd_inverse(&(&sigma0 + linalg::spd_inverse(&gram.gram).unwrap())).unwrap();
            assert!(max_abs(&m.precision, &direct) <= 1e-9 * direct.amax());
            // θ̃ = G⁻¹ xy_sum
            let theta = linalg::spd_inverse(&gram.gram).unwrap() * &gram.xy_sum;
            let wm = &direct * theta;
            assert!((&m.weighted_mean - &wm).amax() <= 1e-9 * wm.amax().max(1.0));
            assert!(linalg::min_eigenvalue(&m.precision) >= -1e-10);
        }
    }

    #[test]
    fn rank_deficient_gram_is_fine() {
        let mut gram = LeafGram::zeros(3);
        gram.push(&DVector::from_vec(vec![1.0, 0.0, 0.0]), 2.0, 1.0);
        let m = leaf_message_linear(&gram, &DMatrix::identity(3, 3)).unwrap();
        assert!((m.precision[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(m.precision[(1, 1)], 0.0);
    }

    #[test]
    fn one_dimensional_reduction() {
        let sigma_sq = 0.8;
        for &(count, sum) in &[(1u64, 2.0), (4, 4.0), (7, -1.3)] {
            let stats = LeafStats { count, reward_sum: sum };
            let scalar = mab::leaf_message(stats, 1.3, sigma_sq);
            let gram = LeafGram {
                gram: DMatrix::from_element(1, 1, count as f64 / sigma_sq),
                xy_sum: DVector::from_element(1, sum / sigma_sq),
                count,
            };
            let vec = leaf_message_linear(&gram, &DMatrix::from_element(1, 1, 1.3)).unwrap();
            assert!((vec.precision[(0, 0)] - scalar.precision).abs() < 1e-12);
            assert!((vec.weighted_mean[0] - scalar.weighted_mean).abs() < 1e-12);
        }

        let tree = Arc::new(Hierarchy::balanced(2, 2).unwrap());
        let scalar_prior = ScalarPrior::doubling(&tree, 0.2, 0.9).unwrap();
        let mut s = MabPosterior::new(Arc::clone(&tree), Arc::new(scalar_prior.clone())).unwrap();
        let mut v = LinearPosterior::new(
            Arc::clone(&tree),
            Arc::new(LinearPrior::isotropic(&tree, &scalar_prior, 1).unwrap()),
        )
        .unwrap();
        let mut rng = stream(4, 0, StreamTag::Auxiliary(0));
        for _ in 0..30 {
            let a = tree.actions()[rng.random_range(0..tree.num_actions())];
            let y: f64 = rng.sample(StandardNormal);
            s.update(a, y).unwrap();
            v.update(a, &[1.0], y).unwrap();
            for id in tree.nodes() {
                let ms = s.message(id);
                let mv = v.message(id);
                assert!((ms.precision - mv.precision[(0, 0)]).abs() < 1e-12);
                assert!((ms.weighted_mean - mv.weighted_mean[0]).abs() < 1e-12);
                let cs = s.conditional(id);
                let cv = v.conditional(id);
                assert!((cs.variance - cv.covariance[(0, 0)]).abs() < 1e-12);
                assert!((cs.mean(0.4) - cv.mean(&DVector::from_element(1, 0.4))[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn update_matches_rebuild_and_checks_inputs() {
        let tree = Arc::new(Hierarchy::balanced(2, 2).unwrap());
        let scalar_prior = ScalarPrior::constant(&tree, 1.0, 0.0, 1.0).unwrap();
        let prior = Arc::new(LinearPrior::isotropic(&tree, &scalar_prior, 3).unwrap());
        let mut v = LinearPosterior::new(Arc::clone(&tree), prior).unwrap();
        v.update(NodeId(5), &[0.3, -1.0, 2.0], 0.7).unwrap();
        assert_eq!(v, v.rebuild().unwrap());
        assert!(matches!(
            v.update(NodeId(5), &[1.0], 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            v.update(NodeId(2), &[1.0, 0.0, 0.0], 0.0),
            Err(Error::NotALeaf(_))
        ));

        let before = v.clone();
        v.update(NodeId(4), &[0.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(v.leaf_gram(NodeId(4)).count, 1);
        assert_eq!(v.leaf_gram(NodeId(4)).gram, before.leaf_gram(NodeId(4)).gram);
        assert_eq!(v.message(NodeId(3)), before.message(NodeId(3)));
    }
}
