//! `HierTS` and the two Thompson sampling baselines.
//!
//! - `HierTS` samples every node of the hierarchy root first and acts greedily
//!   on the sampled action parameters.
//! - `TS` keeps an independent Gaussian posterior per action whose prior
//!   matches the action's marginal prior under the hierarchy.
//! - `FlatTS` collapses the hierarchy to root + leaves: the root keeps its
//!   hyper-prior and each leaf gets the conditional variance
//!   `σ̄²_{0,a} − σ₀₁²`, so its marginal priors match as well.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, LinearPrior, NodeId, PriorSpec, ScalarPrior};
use crate::linalg;
use crate::posterior::linear::LinearPosterior;
use crate::posterior::mab::MabPosterior;
pub use crate::posterior::{ModelSample, SamplingCost};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentKind {
    #[serde(rename = "hierts", alias = "HierTS")]
    HierTs,
    #[serde(rename = "flatts", alias = "FlatTS")]
    FlatTs,
    #[serde(rename = "ts", alias = "TS")]
    Ts,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::HierTs, AgentKind::FlatTs, AgentKind::Ts];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::HierTs => "HierTS",
            AgentKind::FlatTs => "FlatTS",
            AgentKind::Ts => "TS",
        }
    }

    /// Stable code used to derive the agent's random streams.
    pub fn stream_code(self) -> u8 {
        match self {
            AgentKind::HierTs => 0,
            AgentKind::FlatTs => 1,
            AgentKind::Ts => 2,
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hierts" => Ok(AgentKind::HierTs),
            "flatts" => Ok(AgentKind::FlatTs),
            "ts" => Ok(AgentKind::Ts),
            other => Err(Error::InvalidArgument(format!("unknown agent `{other}`"))),
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Root + leaves tree and matching priors used by `FlatTS`.
pub fn flat_scalar_prior(tree: &Hierarchy, prior: &ScalarPrior) -> Result<(Hierarchy, ScalarPrior)> {
    let flat = Hierarchy::flat(tree.num_actions())?;
    let root = prior.variance(NodeId::ROOT);
    let mut v = vec![root];
    for &a in tree.actions() {
        v.push(prior.marginal_variance(tree, a)? - root);
    }
    let p = ScalarPrior::new(&flat, prior.hyper_mean, v, prior.noise_std)?;
    Ok((flat, p))
}

pub fn flat_linear_prior(tree: &Hierarchy, prior: &LinearPrior) -> Result<(Hierarchy, LinearPrior)> {
    let flat = Hierarchy::flat(tree.num_actions())?;
    let root = prior.covariance(NodeId::ROOT).clone();
    let mut covs = vec![root.clone()];
    for &a in tree.actions() {
        covs.push(prior.marginal_covariance(tree, a)? - &root);
    }
    let p = LinearPrior::new(&flat, prior.hyper_mean.clone(), covs, prior.noise_std)?;
    Ok((flat, p))
}

/// Independent conjugate Gaussian posteriors, one per action.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentGaussian {
    mean: Vec<f64>,
    variance: Vec<f64>,
    noise_variance: f64,
}

impl IndependentGaussian {
    pub fn new(prior_mean: f64, prior_variance: Vec<f64>, noise_variance: f64) -> Self {
        IndependentGaussian {
            mean: vec![prior_mean; prior_variance.len()],
            variance: prior_variance,
            noise_variance,
        }
    }

    pub fn moments(&self, k: usize) -> (f64, f64) {
        (self.mean[k], self.variance[k])
    }

    pub fn update(&mut self, k: usize, reward: f64) {
        let precision = 1.0 / self.variance[k] + 1.0 / self.noise_variance;
        let var = 1.0 / precision;
        self.mean[k] = var * (self.mean[k] / self.variance[k] + reward / self.noise_variance);
        self.variance[k] = var;
    }

    pub fn sample(&self, rng: &mut Rng, cost: &mut SamplingCost) -> Vec<f64> {
        cost.normal_draws += self.mean.len() as u64;
        cost.flops += 3 * self.mean.len() as u64;
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// Independent Bayesian linear regressions, one per action.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentLinear {
    precision: Vec<DMatrix<f64>>,
    weighted_mean: Vec<DVector<f64>>,
    mean: Vec<DVector<f64>>,
    upper: Vec<DMatrix<f64>>,
    noise_variance: f64,
}

impl IndependentLinear {
    pub fn new(prior_mean: &DVector<f64>, prior_covariance: &[DMatrix<f64>], noise_variance: f64) -> Result<Self> {
        let mut s = IndependentLinear {
            precision: Vec::new(),
            weighted_mean: Vec::new(),
            mean: Vec::new(),
            upper: Vec::new(),
            noise_variance,
        };
        for cov in prior_covariance {
            let p = linalg::spd_inverse(cov)?;
            s.weighted_mean.push(&p * prior_mean);
            s.precision.push(p);
            s.mean.push(prior_mean.clone());
            s.upper.push(DMatrix::zeros(0, 0));
        }
        for k in 0..prior_covariance.len() {
            s.refresh(k)?;
        }
        Ok(s)
    }

    fn refresh(&mut self, k: usize) -> Result<()> {
        let chol = linalg::spd_factor(&self.precision[k])?;
        self.mean[k] = chol.solve(&self.weighted_mean[k]);
        self.upper[k] = chol.l().transpose();
        Ok(())
    }

    pub fn moments(&self, k: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((self.mean[k].clone(), linalg::spd_inverse(&self.precision[k])?))
    }

    pub fn update(&mut self, k: usize, context: &[f64], reward: f64) -> Result<()> {
        let x = DVector::from_column_slice(context);
        let mut next = self.precision[k].clone();
        next.ger(1.0 / self.noise_variance, &x, &x, 1.0);
        linalg::symmetrize(&mut next);
        let old = std::mem::replace(&mut self.precision[k], next);
        let old_wm = self.weighted_mean[k].clone();
        self.weighted_mean[k].axpy(reward / self.noise_variance, &x, 1.0);
        if let Err(e) = self.refresh(k) {
            self.precision[k] = old;
            self.weighted_mean[k] = old_wm;
            return Err(e);
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut Rng, cost: &mut SamplingCost) -> Vec<DVector<f64>> {
        self.mean
            .iter()
            .zip(&self.upper)
            .map(|(m, u)| {
                let d = m.len();
                let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                cost.normal_draws += d as u64;
                cost.flops += (d * d) as u64;
                m + u.solve_upper_triangular(&z).expect("positive diagonal")
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
enum Policy {
    HierMab(MabPosterior),
    HierLinear(LinearPosterior),
    IndependentMab(IndependentGaussian),
    IndependentLinear(IndependentLinear),
}

/// A Thompson sampling agent with its own random stream.
#[derive(Debug, Clone)]
pub struct Agent {
    kind: AgentKind,
    tree: Arc<Hierarchy>,
    policy: Policy,
    rng: Rng,
    cost: SamplingCost,
}

impl Agent {
    pub fn new(kind: AgentKind, tree: Arc<Hierarchy>, prior: &PriorSpec, rng: Rng) -> Result<Self> {
        let policy = match (kind, prior) {
            (AgentKind::HierTs, PriorSpec::Scalar(p)) => {
                Policy::HierMab(MabPosterior::new(Arc::clone(&tree), Arc::new(p.clone()))?)
            }
            (AgentKind::HierTs, PriorSpec::Linear(p)) => {
                Policy::HierLinear(LinearPosterior::new(Arc::clone(&tree), Arc::new(p.clone()))?)
            }
            (AgentKind::FlatTs, PriorSpec::Scalar(p)) => {
                let (flat, fp) = flat_scalar_prior(&tree, p)?;
                Policy::HierMab(MabPosterior::new(Arc::new(flat), Arc::new(fp))?)
            }
            (AgentKind::FlatTs, PriorSpec::Linear(p)) => {
                let (flat, fp) = flat_linear_prior(&tree, p)?;
                Policy::HierLinear(LinearPosterior::new(Arc::new(flat), Arc::new(fp))?)
            }
            (AgentKind::Ts, PriorSpec::Scalar(p)) => {
                let v = tree
                    .actions()
                    .iter()
                    .map(|&a| p.marginal_variance(&tree, a))
                    .collect::<Result<_>>()?;
                Policy::IndependentMab(IndependentGaussian::new(p.hyper_mean, v, p.noise_variance()))
            }
            (AgentKind::Ts, PriorSpec::Linear(p)) => {
                let covs = tree
                    .actions()
                    .iter()
                    .map(|&a| p.marginal_covariance(&tree, a))
                    .collect::<Result<Vec<_>>>()?;
                Policy::IndependentLinear(IndependentLinear::new(&p.hyper_mean, &covs, p.noise_variance())?)
            }
        };
        Ok(Agent {
            kind,
            tree,
            policy,
            rng,
            cost: SamplingCost::default(),
        })
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    /// Cumulative sampling work since construction.
    pub fn sampling_cost(&self) -> SamplingCost {
        self.cost
    }

    /// Hierarchical posterior, for `HierTS` and `FlatTS` on K-armed problems.
    pub fn mab_posterior(&self) -> Option<&MabPosterior> {
        match &self.policy {
            Policy::HierMab(p) => Some(p),
            _ => None,
        }
    }

    pub fn linear_posterior(&self) -> Option<&LinearPosterior> {
        match &self.policy {
            Policy::HierLinear(p) => Some(p),
            _ => None,
        }
    }

    pub fn independent_posterior(&self) -> Option<&IndependentGaussian> {
        match &self.policy {
            Policy::IndependentMab(p) => Some(p),
            _ => None,
        }
    }

    /// Sampled mean reward of every action under one posterior draw, in
    /// [`Hierarchy::actions`] order. The K-armed model ignores `context`.
    pub fn sample_rewards(&mut self, context: &[f64]) -> Vec<f64> {
        let cost = &mut self.cost;
        let rng = &mut self.rng;
        match &self.policy {
            Policy::HierMab(p) => {
                let s = p.sample_counted(rng, cost);
                p.tree().actions().iter().map(|&a| s.scalar(a)).collect()
            }
            Policy::HierLinear(p) => {
                let s = p.sample_counted(rng, cost);
                p.tree().actions().iter().map(|&a| s.reward(a, context)).collect()
            }
            Policy::IndependentMab(p) => p.sample(rng, cost),
            Policy::IndependentLinear(p) => p
                .sample(rng, cost)
                .iter()
                .map(|t| t.iter().zip(context).map(|(a, b)| a * b).sum())
                .collect(),
        }
    }

    /// Thompson sampling step: the action with the highest sampled mean reward.
    pub fn act(&mut self, context: &[f64]) -> NodeId {
        let rewards = self.sample_rewards(context);
        self.tree.actions()[argmax(&rewards)]
    }

    pub fn update(&mut self, action: NodeId, context: &[f64], reward: f64) -> Result<()> {
        let k = self.tree.require_action(action)?;
        match &mut self.policy {
            Policy::HierMab(p) => {
                let leaf = p.tree().actions()[k];
                p.update(leaf, reward)
            }
            Policy::HierLinear(p) => {
                let leaf = p.tree().actions()[k];
                p.update(leaf, context, reward)
            }
            Policy::IndependentMab(p) => {
                p.update(k, reward);
                Ok(())
            }
            Policy::IndependentLinear(p) => {
                if context.len() != p.mean[k].len() {
                    return Err(Error::DimensionMismatch {
                        expected: p.mean[k].len(),
                        got: context.len(),
                    });
                }
                p.update(k, context, reward)
            }
        }
    }
}

/// Draw of all node parameters from a `HierTS` posterior.
pub fn hierts_sample(posterior: &MabPosterior, rng: &mut Rng) -> ModelSample {
    posterior.sample(rng)
}
