//! K-armed Gaussian hierarchy: scalar node parameters.

use std::ops::Add;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{ModelSample, SamplingCost};
use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, NodeId, ScalarPrior};
use crate::rng::Rng;

/// Sufficient statistics of one action node.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LeafStats {
    pub count: u64,
    pub reward_sum: f64,
}

impl LeafStats {
    pub fn push(&mut self, reward: f64) {
        self.count += 1;
        self.reward_sum += reward;
    }
}

/// Gaussian likelihood `exp(-½ λ (θ - m)²)` kept as `(λ, λm)`.
///
/// A zero precision is the flat likelihood and always carries a zero
/// weighted mean.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NodeMessage {
    pub precision: f64,
    pub weighted_mean: f64,
}

impl NodeMessage {
    pub const ZERO: NodeMessage = NodeMessage {
        precision: 0.0,
        weighted_mean: 0.0,
    };

    /// Location `m` of the likelihood; `None` for the flat message.
    pub fn mean(&self) -> Option<f64> {
        (self.precision > 0.0).then(|| self.weighted_mean / self.precision)
    }

    /// Variance `1/λ`, infinite for the flat message.
    pub fn variance(&self) -> f64 {
        1.0 / self.precision
    }
}

impl Add for NodeMessage {
    type Output = NodeMessage;

    fn add(self, rhs: NodeMessage) -> NodeMessage {
        NodeMessage {
            precision: self.precision + rhs.precision,
            weighted_mean: self.weighted_mean + rhs.weighted_mean,
        }
    }
}

/// Likelihood of a leaf's observations as a function of the leaf value.
pub fn observation_message(stats: LeafStats, sigma_sq: f64) -> NodeMessage {
    NodeMessage {
        precision: stats.count as f64 / sigma_sq,
        weighted_mean: stats.reward_sum / sigma_sq,
    }
}

/// Integrates a node out of `data` against `N(θ_parent, σ₀²)`, producing the
/// message seen by the parent: `λ̃ = Mλ₀/(M+λ₀)`, `λ̃θ̃ = λ₀/(M+λ₀)·Σλθ`.
fn integrate(data: NodeMessage, sigma0_sq: f64) -> NodeMessage {
    if data.precision == 0.0 {
        return NodeMessage::ZERO;
    }
    let prior_precision = 1.0 / sigma0_sq;
    let total = data.precision + prior_precision;
    NodeMessage {
        precision: data.precision * prior_precision / total,
        weighted_mean: prior_precision / total * data.weighted_mean,
    }
}

/// Upward message of an action node, `σ̃² = σ₀² + σ²/count` and
/// `θ̃ = mean reward`, in precision form so that it is defined at zero count.
pub fn leaf_message(stats: LeafStats, sigma0_sq: f64, sigma_sq: f64) -> NodeMessage {
    integrate(observation_message(stats, sigma_sq), sigma0_sq)
}

/// Upward message of an internal node from its children's messages,
/// `σ̃² = σ₀² + M⁻¹` with `M = Σ λ̃ₖ`.
pub fn internal_message(child_messages: &[NodeMessage], sigma0_sq: f64) -> Result<NodeMessage> {
    if child_messages.is_empty() {
        return Err(Error::EmptyChildren);
    }
    Ok(integrate(sum(child_messages), sigma0_sq))
}

fn sum(messages: &[NodeMessage]) -> NodeMessage {
    messages.iter().fold(NodeMessage::ZERO, |acc, &m| acc + m)
}

/// Conditional posterior `N(slope·θ_parent + intercept, variance)` of a node
/// given its parent's value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorParams {
    pub slope: f64,
    pub intercept: f64,
    pub variance: f64,
}

impl PosteriorParams {
    fn from_data(data: NodeMessage, sigma0_sq: f64) -> Self {
        let prior_precision = 1.0 / sigma0_sq;
        let variance = 1.0 / (prior_precision + data.precision);
        PosteriorParams {
            slope: variance * prior_precision,
            intercept: variance * data.weighted_mean,
            variance,
        }
    }

    pub fn mean(&self, parent_value: f64) -> f64 {
        self.slope * parent_value + self.intercept
    }

    pub fn precision(&self) -> f64 {
        1.0 / self.variance
    }
}

/// Posterior of a node given its parent's value and its children's messages
/// (for a leaf, pass its [`observation_message`]).
pub fn node_posterior(child_messages: &[NodeMessage], sigma0_sq: f64) -> PosteriorParams {
    PosteriorParams::from_data(sum(child_messages), sigma0_sq)
}

/// Posterior state of the K-armed hierarchy.
///
/// Updates touch only the played action's path; every other cached message
/// stays bit-identical. [`MabPosterior::rebuild`] recomputes everything from
/// the leaf statistics and yields the same state.
#[derive(Debug, Clone, PartialEq)]
pub struct MabPosterior {
    tree: Arc<Hierarchy>,
    prior: Arc<ScalarPrior>,
    stats: Vec<LeafStats>,
    data: Vec<NodeMessage>,
    up: Vec<NodeMessage>,
}

impl MabPosterior {
    pub fn new(tree: Arc<Hierarchy>, prior: Arc<ScalarPrior>) -> Result<Self> {
        if prior.node_variance.len() != tree.len() {
            return Err(Error::DimensionMismatch {
                expected: tree.len(),
                got: prior.node_variance.len(),
            });
        }
        let n = tree.len();
        Ok(MabPosterior {
            tree,
            prior,
            stats: vec![LeafStats::default(); n],
            data: vec![NodeMessage::ZERO; n],
            up: vec![NodeMessage::ZERO; n],
        })
    }

    /// State holding `stats` (indexed like [`Hierarchy::actions`]), computed
    /// bottom-up from scratch.
    pub fn from_stats(tree: Arc<Hierarchy>, prior: Arc<ScalarPrior>, stats: &[LeafStats]) -> Result<Self> {
        let mut state = Self::new(tree, prior)?;
        if stats.len() != state.tree.num_actions() {
            return Err(Error::DimensionMismatch {
                expected: state.tree.num_actions(),
                got: stats.len(),
            });
        }
        for (k, &s) in stats.iter().enumerate() {
            let a = state.tree.actions()[k];
            state.stats[a.index()] = s;
        }
        let tree = Arc::clone(&state.tree);
        for &id in tree.top_down().iter().rev() {
            state.refresh(id);
        }
        Ok(state)
    }

    /// From-scratch recomputation of every cached message.
    pub fn rebuild(&self) -> Self {
        let stats: Vec<LeafStats> = self.tree.actions().iter().map(|a| self.stats[a.index()]).collect();
        Self::from_stats(Arc::clone(&self.tree), Arc::clone(&self.prior), &stats).expect("consistent state")
    }

    pub fn tree(&self) -> &Arc<Hierarchy> {
        &self.tree
    }

    pub fn prior(&self) -> &Arc<ScalarPrior> {
        &self.prior
    }

    pub fn leaf_stats(&self, a: NodeId) -> LeafStats {
        self.stats[a.index()]
    }

    /// Upward message of node `id` (zero for the root, which has no parent).
    pub fn message(&self, id: NodeId) -> NodeMessage {
        self.up[id.index()]
    }

    /// Likelihood of the observations below `id` as a function of `θ_id`.
    pub fn data_message(&self, id: NodeId) -> NodeMessage {
        self.data[id.index()]
    }

    fn refresh(&mut self, id: NodeId) {
        let i = id.index();
        self.data[i] = if self.tree.is_action(id) {
            observation_message(self.stats[i], self.prior.noise_variance())
        } else {
            let mut acc = NodeMessage::ZERO;
            for &c in self.tree.children(id) {
                acc = acc + self.up[c.index()];
            }
            acc
        };
        self.up[i] = if id.is_root() {
            NodeMessage::ZERO
        } else {
            integrate(self.data[i], self.prior.variance(id))
        };
    }

    /// Records reward `reward` at action node `action` and refreshes the
    /// messages on its path to the root.
    pub fn update(&mut self, action: NodeId, reward: f64) -> Result<()> {
        self.tree.require_action(action)?;
        self.stats[action.index()].push(reward);
        let mut cur = Some(action);
        while let Some(id) = cur {
            self.refresh(id);
            cur = self.tree.parent(id);
        }
        Ok(())
    }

    /// Conditional posterior of `id` given its parent (the hyper-posterior
    /// for the root, whose "parent value" is the hyper-prior mean).
    pub fn conditional(&self, id: NodeId) -> PosteriorParams {
        PosteriorParams::from_data(self.data[id.index()], self.prior.variance(id))
    }

    /// `σ̂⁻²_{t,i}`, the conditional posterior precision of node `id`.
    pub fn node_precision(&self, id: NodeId) -> f64 {
        1.0 / self.prior.variance(id) + self.data[id.index()].precision
    }

    /// Hyper-posterior mean and variance of the root.
    pub fn hyper_posterior(&self) -> (f64, f64) {
        let p = self.conditional(NodeId::ROOT);
        (p.mean(self.prior.hyper_mean), p.variance)
    }

    /// Exact marginal posterior mean and variance of any node, composing the
    /// affine conditionals down the path from the root.
    pub fn marginal_moments(&self, id: NodeId) -> Result<(f64, f64)> {
        let mut mean = self.prior.hyper_mean;
        let mut var = 0.0;
        for node in self.tree.path_to_root(id)? {
            let p = self.conditional(node);
            mean = p.mean(mean);
            var = p.variance + p.slope * p.slope * var;
        }
        Ok((mean, var))
    }

    /// Marginal posterior mean and variance of an action node.
    pub fn marginal_action_moments(&self, a: NodeId) -> Result<(f64, f64)> {
        self.tree.require_action(a)?;
        self.marginal_moments(a)
    }

    /// Marginal posterior variance of action `a` written as the path sum
    /// `Σᵢ (Πⱼ₌ᵢ₊₁ σ̂⁴ⱼ/σ₀⁴ⱼ) σ̂²ᵢ`.
    pub fn path_variance_decomposition(&self, a: NodeId) -> Result<f64> {
        self.tree.require_action(a)?;
        let path = self.tree.path_to_root(a)?;
        let hat: Vec<f64> = path.iter().map(|&i| self.conditional(i).variance).collect();
        let ratio: Vec<f64> = path
            .iter()
            .zip(&hat)
            .map(|(&i, &v)| {
                let s0 = self.prior.variance(i);
                (v * v) / (s0 * s0)
            })
            .collect();
        let mut total = 0.0;
        for i in 0..path.len() {
            let product: f64 = ratio[i + 1..].iter().product();
            total += product * hat[i];
        }
        Ok(total)
    }

    /// Draws `Θ_t` root first: the root from its hyper-posterior, then each
    /// node from its conditional posterior given its sampled parent.
    pub fn sample(&self, rng: &mut Rng) -> ModelSample {
        self.sample_counted(rng, &mut SamplingCost::default())
    }

    pub fn sample_counted(&self, rng: &mut Rng, cost: &mut SamplingCost) -> ModelSample {
        let mut values = vec![0.0; self.tree.len()];
        for &id in self.tree.top_down() {
            let parent_value = match self.tree.parent(id) {
                Some(p) => values[p.index()],
                None => self.prior.hyper_mean,
            };
            let data = self.data[id.index()];
            let prior_precision = 1.0 / self.prior.variance(id);
            let precision = prior_precision + data.precision;
            let mean = (prior_precision * parent_value + data.weighted_mean) / precision;
            let z: f64 = rng.sample(StandardNormal);
            values[id.index()] = mean + z / precision.sqrt();
            cost.normal_draws += 1;
            // 1/σ₀², +, *, +, /, sqrt, /, +
            cost.flops += 8;
        }
        ModelSample::new(1, values)
    }

    /// Perturbs one cached message in place. Used to check that the
    /// verification suite detects corrupted state.
    #[doc(hidden)]
    pub fn corrupt_message(&mut self, id: NodeId, delta: f64) {
        self.data[id.index()].weighted_mean += delta;
    }
}
