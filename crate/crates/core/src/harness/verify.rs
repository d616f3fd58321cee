//! Randomized verification of the recursive posteriors against the dense
//! oracle, and of the per-update precision inequalities.
//!
//! Suites:
//!
//! - scalar: random trees and histories; every node's marginal posterior
//!   mean and variance versus the conditioned joint Gaussian, plus
//!   incremental state versus a rebuild from sufficient statistics.
//! - linear: the same for `d`-dimensional node parameters.
//! - instrumented: `HierTS` runs on sampled instances. After every round the
//!   path-variance decomposition of each leaf is compared with the oracle's
//!   marginal variance, and every posterior update is checked for
//!   - `σ̂⁻²_{t+1,i} − σ̂⁻²_{t,i} ≥ c^{i−L} Π_{j>i} (σ̂⁴_{t,j}/σ₀⁴_j) σ⁻²` along
//!     the updated path (root first, `L` nodes), and
//!   - `σ̂⁻²_{t+1,i} ≤ c σ̂⁻²_{t,i}` at every node,
//!
//!   with `c = 1 + σ₀,max²/σ²`, and again with `c = 2` on runs where
//!   `σ ≥ σ₀,max`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentKind};
use crate::envs::sample_instance;
use crate::error::Result;
use crate::hierarchy::{Hierarchy, LinearPrior, NodeId, PriorSpec, ScalarPrior};
use crate::oracle::{self, Observation};
use crate::posterior::linear::LinearPosterior;
use crate::posterior::mab::{LeafStats, MabPosterior};
use crate::rng::{stream, Rng, StreamTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub scalar_cases: usize,
    pub linear_cases: usize,
    pub instrumented_runs: usize,
    pub rounds: usize,
    /// Levels of the random trees, the root counting as one.
    pub max_levels: usize,
    pub max_nodes: usize,
    pub max_history: usize,
    pub max_dim: usize,
    /// Relative tolerance of marginal means and (co)variances.
    pub moment_tolerance: f64,
    /// Relative tolerance of the path-variance decomposition.
    pub identity_tolerance: f64,
    /// Test hook: add this amount to a cached message before comparing.
    pub sentinel: Option<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 0,
            scalar_cases: 100,
            linear_cases: 30,
            instrumented_runs: 20,
            rounds: 100,
            max_levels: 4,
            max_nodes: 32,
            max_history: 50,
            max_dim: 4,
            moment_tolerance: 1e-8,
            identity_tolerance: 1e-9,
            sentinel: None,
        }
    }
}

/// Outcome of one check across a suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    pub comparisons: usize,
    pub max_abs: f64,
    pub max_rel: f64,
    pub tolerance: f64,
    pub violations: usize,
    /// Case index of the largest deviation or first violation.
    pub worst_case: Option<usize>,
}

impl Check {
    fn new(name: &str, tolerance: f64) -> Self {
        Check {
            name: name.to_string(),
            cases: 0,
            comparisons: 0,
            max_abs: 0.0,
            max_rel: 0.0,
            tolerance,
            violations: 0,
            worst_case: None,
        }
    }

    /// Records a relative comparison gated on `tolerance`.
    fn compare(&mut self, case: usize, abs: f64, rel: f64) {
        self.comparisons += 1;
        self.max_abs = self.max_abs.max(abs);
        let bad = rel.is_nan() || rel > self.tolerance;
        if bad {
            self.violations += 1;
        }
        if rel > self.max_rel || rel.is_nan() {
            self.max_rel = if rel.is_nan() { f64::INFINITY } else { rel };
            if self.violations <= 1 || bad {
                self.worst_case = Some(case);
            }
        }
    }

    /// Records an inequality `lhs ≥ rhs`, reporting the shortfall.
    fn inequality(&mut self, case: usize, lhs: f64, rhs: f64, scale: f64) {
        self.comparisons += 1;
        let shortfall = rhs - lhs;
        self.max_abs = self.max_abs.max(shortfall.max(0.0));
        let rel = shortfall.max(0.0) / scale.max(f64::MIN_POSITIVE);
        self.max_rel = self.max_rel.max(rel);
        if shortfall.is_nan() || shortfall > self.tolerance * scale {
            self.violations += 1;
            if self.worst_case.is_none() {
                self.worst_case = Some(case);
            }
        }
    }

    fn exact(&mut self, case: usize, equal: bool) {
        self.comparisons += 1;
        if !equal {
            self.violations += 1;
            self.max_abs = f64::INFINITY;
            self.max_rel = f64::INFINITY;
            self.worst_case.get_or_insert(case);
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<28} {:>6} {:>8} {:>12} {:>12} {:>9} {:>5}  status",
            "check", "cases", "compared", "max_abs", "max_rel", "tolerance", "fails"
        )?;
        for c in &self.checks {
            write!(
                f,
                "{:<28} {:>6} {:>8} {:>12.3e} {:>12.3e} {:>9.0e} {:>5}  {}",
                c.name,
                c.cases,
                c.comparisons,
                c.max_abs,
                c.max_rel,
                c.tolerance,
                c.violations,
                if c.passed() { "ok" } else { "FAIL" }
            )?;
            if let (false, Some(case)) = (c.passed(), c.worst_case) {
                write!(f, "  (replay: seed {} case {case})", self.seed)?;
            }
            writeln!(f)?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// `|a − b| / max(|a|, |b|)`, zero when both are zero.
pub fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Max-norm of the difference over the larger max-norm.
pub fn relative_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, f64) {
    let abs = (a - b).amax();
    let scale = a.amax().max(b.amax());
    (abs, if scale == 0.0 { 0.0 } else { abs / scale })
}

fn relative_vector(a: &DVector<f64>, b: &DVector<f64>) -> (f64, f64) {
    let abs = (a - b).amax();
    let scale = a.amax().max(b.amax());
    (abs, if scale == 0.0 { 0.0 } else { abs / scale })
}

/// Random tree with at most `max_levels` levels and `max_nodes` nodes; every
/// internal node has 2 to 4 children.
pub fn random_tree(rng: &mut Rng, max_levels: usize, max_nodes: usize) -> Hierarchy {
    let max_levels = max_levels.max(2);
    let max_nodes = max_nodes.max(3);
    let mut parents = BTreeMap::new();
    let mut queue = std::collections::VecDeque::from([(NodeId::ROOT, 1usize)]);
    let mut next = 2;
    while let Some((node, level)) = queue.pop_front() {
        if level >= max_levels || !(node.is_root() || rng.random_bool(0.6)) {
            continue;
        }
        let room = max_nodes + 1 - next;
        if room < 2 {
            continue;
        }
        let k = rng.random_range(2..=room.min(4));
        for _ in 0..k {
            parents.insert(NodeId(next), node);
            queue.push_back((NodeId(next), level + 1));
            next += 1;
        }
    }
    Hierarchy::from_parents(&parents).expect("random trees are valid")
}

/// Random scalar prior; `noise_dominates` forces `σ ≥ σ₀,max`.
pub fn random_scalar_prior(tree: &Hierarchy, rng: &mut Rng, noise_dominates: bool) -> ScalarPrior {
    let v: Vec<f64> = (0..tree.len()).map(|_| rng.random_range(0.2..3.0)).collect();
    let max = v.iter().copied().fold(0.0, f64::max);
    let noise_std = if noise_dominates {
        max.sqrt() * rng.random_range(1.0..1.5)
    } else {
        rng.random_range(0.3..1.2)
    };
    ScalarPrior::new(tree, rng.random_range(-1.0..1.0), v, noise_std).expect("valid prior")
}

pub fn random_linear_prior(tree: &Hierarchy, d: usize, rng: &mut Rng) -> LinearPrior {
    let covs = (0..tree.len())
        .map(|_| {
            let b = DMatrix::from_fn(d, d, |_, _| 0.7 * rng.sample::<f64, _>(StandardNormal));
            &b * b.transpose() / d as f64 + DMatrix::identity(d, d) * rng.random_range(0.1..0.5)
        })
        .collect();
    let mean = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    LinearPrior::new(tree, mean, covs, rng.random_range(0.3..1.5)).expect("valid prior")
}

fn random_leaf(tree: &Hierarchy, rng: &mut Rng) -> NodeId {
    tree.actions()[rng.random_range(0..tree.num_actions())]
}

/// Run every suite.
pub fn verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    checks.extend(scalar_suite(cfg)?);
    checks.extend(linear_suite(cfg)?);
    checks.extend(instrumented_suite(cfg)?);
    let mut warnings = Vec::new();
    for c in &checks {
        if c.cases == 0 {
            warnings.push(format!("{}: empty suite, nothing was checked", c.name));
        }
    }
    Ok(VerifyReport {
        seed: cfg.seed,
        checks,
        warnings,
    })
}

pub fn scalar_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let mut mean = Check::new("scalar marginal mean", cfg.moment_tolerance);
    let mut var = Check::new("scalar marginal variance", cfg.moment_tolerance);
    let mut rebuild = Check::new("scalar incremental=rebuild", 0.0);
    for case in 0..cfg.scalar_cases {
        let mut rng = stream(cfg.seed, case as u64, StreamTag::Auxiliary(1));
        let tree = Arc::new(random_tree(&mut rng, cfg.max_levels, cfg.max_nodes));
        let prior = random_scalar_prior(&tree, &mut rng, false);
        let mut post = MabPosterior::new(Arc::clone(&tree), Arc::new(prior.clone()))?;
        let mut obs = Vec::new();
        for _ in 0..rng.random_range(0..=cfg.max_history) {
            let a = random_leaf(&tree, &mut rng);
            let y = prior.hyper_mean + 2.0 * rng.sample::<f64, _>(StandardNormal);
            post.update(a, y)?;
            obs.push(Observation::scalar(a, y));
        }
        let stats: Vec<LeafStats> = tree.actions().iter().map(|&a| post.leaf_stats(a)).collect();
        let rebuilt = MabPosterior::from_stats(Arc::clone(&tree), Arc::new(prior.clone()), &stats)?;
        rebuild.exact(case, rebuilt == post);
        if let Some(delta) = cfg.sentinel {
            post.corrupt_message(NodeId::ROOT, delta);
        }
        let joint = oracle::condition(&oracle::joint_prior_scalar(&tree, &prior), &obs, prior.noise_variance())?;
        for id in tree.nodes() {
            let (m, v) = post.marginal_moments(id)?;
            let (om, ov) = (joint.node_mean(id)[0], joint.node_covariance(id)[(0, 0)]);
            mean.compare(case, (m - om).abs(), relative(m, om));
            var.compare(case, (v - ov).abs(), relative(v, ov));
        }
        mean.cases += 1;
        var.cases += 1;
        rebuild.cases += 1;
    }
    Ok(vec![mean, var, rebuild])
}

pub fn linear_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let mut mean = Check::new("linear marginal mean", cfg.moment_tolerance);
    let mut cov = Check::new("linear marginal covariance", cfg.moment_tolerance);
    for case in 0..cfg.linear_cases {
        let mut rng = stream(cfg.seed, case as u64, StreamTag::Auxiliary(2));
        let tree = Arc::new(random_tree(&mut rng, cfg.max_levels, cfg.max_nodes));
        let d = rng.random_range(1..=cfg.max_dim.max(1));
        let prior = random_linear_prior(&tree, d, &mut rng);
        let mut post = LinearPosterior::new(Arc::clone(&tree), Arc::new(prior.clone()))?;
        let mut obs = Vec::new();
        for _ in 0..rng.random_range(0..=cfg.max_history) {
            let a = random_leaf(&tree, &mut rng);
            let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let y = rng.sample::<f64, _>(StandardNormal);
            post.update(a, &x, y)?;
            obs.push(Observation {
                action: a,
                context: x,
                reward: y,
            });
        }
        if let Some(delta) = cfg.sentinel {
            post.corrupt_message(NodeId::ROOT, delta)?;
        }
        let joint = oracle::condition(&oracle::joint_prior_linear(&tree, &prior), &obs, prior.noise_variance())?;
        for id in tree.nodes() {
            let (m, c) = post.marginal_moments(id)?;
            let (abs, rel) = relative_vector(&m, &joint.node_mean(id));
            mean.compare(case, abs, rel);
            let (abs, rel) = relative_matrix(&c, &joint.node_covariance(id));
            cov.compare(case, abs, rel);
        }
        mean.cases += 1;
        cov.cases += 1;
    }
    Ok(vec![mean, cov])
}

/// Slack for floating-point rounding in the inequality checks, relative to
/// the precisions compared.
pub const INEQUALITY_SLACK: f64 = 1e-12;

pub fn instrumented_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let mut identity = Check::new("path-variance identity", cfg.identity_tolerance);
    let mut lower = Check::new("precision increase bound", INEQUALITY_SLACK);
    let mut growth = Check::new("precision growth (c)", INEQUALITY_SLACK);
    let mut growth2 = Check::new("precision growth (c=2)", INEQUALITY_SLACK);
    for run in 0..cfg.instrumented_runs {
        let mut rng = stream(cfg.seed, run as u64, StreamTag::Auxiliary(3));
        let tree = Arc::new(random_tree(&mut rng, cfg.max_levels, cfg.max_nodes));
        let noise_dominates = run % 2 == 0;
        let prior = random_scalar_prior(&tree, &mut rng, noise_dominates);
        let spec = PriorSpec::Scalar(prior.clone());
        let instance = sample_instance(&tree, &spec, &mut rng)?;
        let mut agent = Agent::new(
            AgentKind::HierTs,
            Arc::clone(&tree),
            &spec,
            stream(cfg.seed, run as u64, StreamTag::Agent(0)),
        )?;
        let mut noise = stream(cfg.seed, run as u64, StreamTag::Noise(0));
        let mut joint = oracle::joint_prior_scalar(&tree, &prior);
        let s2 = prior.noise_variance();
        let c = 1.0 + prior.max_variance() / s2;

        let check_identity = |post: &MabPosterior, joint: &oracle::JointGaussian, identity: &mut Check| -> Result<()> {
            for &a in tree.actions() {
                let dec = post.path_variance_decomposition(a)?;
                let ov = joint.node_covariance(a)[(0, 0)];
                identity.compare(run, (dec - ov).abs(), relative(dec, ov));
            }
            Ok(())
        };
        check_identity(
            agent.mab_posterior().expect("hierarchical posterior"),
            &joint,
            &mut identity,
        )?;

        for _ in 0..cfg.rounds {
            let a = agent.act(&[1.0]);
            let before = agent.mab_posterior().expect("hierarchical posterior").clone();
            let y = instance.step(a, &[1.0], &mut noise)?;
            agent.update(a, &[1.0], y)?;
            let after = agent.mab_posterior().expect("hierarchical posterior");

            let path = tree.path_to_root(a)?;
            let len = path.len();
            for (i, &node) in path.iter().enumerate() {
                let product: f64 = path[i + 1..]
                    .iter()
                    .map(|&j| {
                        let hat = 1.0 / before.node_precision(j);
                        let s0 = prior.variance(j);
                        hat * hat / (s0 * s0)
                    })
                    .product();
                let rhs = c.powi(i as i32 + 1 - len as i32) * product / s2;
                let lhs = after.node_precision(node) - before.node_precision(node);
                lower.inequality(run, lhs, rhs, after.node_precision(node));
            }
            for id in tree.nodes() {
                let (p0, p1) = (before.node_precision(id), after.node_precision(id));
                growth.inequality(run, c * p0, p1, p1);
                if noise_dominates {
                    growth2.inequality(run, 2.0 * p0, p1, p1);
                }
            }

            oracle::condition_in_place(&mut joint, &Observation::scalar(a, y), s2)?;
            check_identity(after, &joint, &mut identity)?;
        }
        identity.cases += 1;
        lower.cases += 1;
        growth.cases += 1;
        if noise_dominates {
            growth2.cases += 1;
        }
    }
    Ok(vec![identity, lower, growth, growth2])
}
