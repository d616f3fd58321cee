//! Bayes regret experiments, the regret bound calculator and the randomized
//! verification suites.
//!
//! Every run draws one instance `Θ_*` and plays all agents on it. Agents have
//! their own sampling and reward-noise streams; contexts are shared. Runs are
//! independent, execute in parallel and are reduced in run order, so results
//! do not depend on the number of worker threads.

pub mod bound;
pub mod config;
pub mod verify;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::agents::{Agent, AgentKind};
use crate::envs::{sample_instance, ContextSource, FittedProblem, Instance};
use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, PriorSpec};
use crate::rng::{stream, StreamTag};

pub use bound::{complexity_term, default_c, regret_bound, BoundReport, NodeTerm};
pub use config::{Model, PriorScheme, Problem, RunConfig, TreeSpec};
pub use verify::{verify, VerifyConfig, VerifyReport};

/// Where each run's `Θ_*` comes from.
#[derive(Debug, Clone)]
pub enum Truth {
    /// Drawn from the agents' prior, one instance per run.
    Sampled,
    /// The same instance in every run.
    Fixed(Instance),
}

/// A fully specified regret experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub tree: Arc<Hierarchy>,
    pub prior: PriorSpec,
    pub truth: Truth,
    pub contexts: ContextSource,
    pub horizon: usize,
    pub runs: usize,
    pub agents: Vec<AgentKind>,
    pub seed: u64,
}

impl Experiment {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let Problem { tree, prior } = cfg.resolve()?;
        let contexts = match cfg.model {
            Model::KArmed => ContextSource::Constant,
            Model::Linear { d } => ContextSource::UnitSphere(d),
        };
        Ok(Experiment {
            tree,
            prior,
            truth: Truth::Sampled,
            contexts,
            horizon: cfg.horizon,
            runs: cfg.instances,
            agents: cfg.agents.clone(),
            seed: cfg.seed,
        })
    }

    /// Classification bandit: fixed truth, contexts drawn from the test pool.
    pub fn from_fit(fit: &FittedProblem, horizon: usize, runs: usize, agents: Vec<AgentKind>, seed: u64) -> Self {
        Experiment {
            tree: Arc::clone(&fit.tree),
            prior: PriorSpec::Linear(fit.prior.clone()),
            truth: Truth::Fixed(fit.truth.clone()),
            contexts: ContextSource::Pool(Arc::new(fit.contexts.clone())),
            horizon,
            runs,
            agents,
            seed,
        }
    }

    /// Cumulative regret of every agent in run `r`, `[agent][round]`.
    pub fn run_once(&self, r: usize) -> Result<Vec<Vec<f64>>> {
        let r64 = r as u64;
        let instance = match &self.truth {
            Truth::Sampled => sample_instance(
                &self.tree,
                &self.prior,
                &mut stream(self.seed, r64, StreamTag::Instance),
            )?,
            Truth::Fixed(inst) => inst.clone(),
        };
        if instance.dim() != self.prior.dim() || self.contexts.dim() != self.prior.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.prior.dim(),
                got: instance.dim(),
            });
        }
        self.agents
            .iter()
            .map(|&kind| {
                let code = kind.stream_code();
                let mut agent = Agent::new(
                    kind,
                    Arc::clone(&self.tree),
                    &self.prior,
                    stream(self.seed, r64, StreamTag::Agent(code)),
                )?;
                let mut noise = stream(self.seed, r64, StreamTag::Noise(code));
                let mut ctx_rng = stream(self.seed, r64, StreamTag::Context);
                let mut total = 0.0;
                let mut curve = Vec::with_capacity(self.horizon);
                for t in 0..self.horizon {
                    let x = self.contexts.next(&mut ctx_rng);
                    let action = agent.act(&x);
                    let (_, best) = instance.best(&x);
                    let regret = best - instance.mean_reward(action, &x)?;
                    if regret < 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "negative regret {regret} in run {r}, round {}",
                            t + 1
                        )));
                    }
                    let reward = instance.step(action, &x, &mut noise)?;
                    agent.update(action, &x, reward)?;
                    total += regret;
                    curve.push(total);
                }
                Ok(curve)
            })
            .collect()
    }

    /// Runs every instance on `jobs` threads (all cores when `None`).
    pub fn run(&self, jobs: Option<usize>) -> Result<RegretCurve> {
        let work =
            || -> Result<Vec<Vec<Vec<f64>>>> { (0..self.runs).into_par_iter().map(|r| self.run_once(r)).collect() };
        let per_run = match jobs {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
                .install(work)?,
            None => work()?,
        };
        Ok(RegretCurve::from_runs(&self.agents, self.horizon, &per_run))
    }
}

/// Bayes regret of a config's experiment.
pub fn run_bayes_regret(cfg: &RunConfig, jobs: Option<usize>) -> Result<RegretCurve> {
    Experiment::from_config(cfg)?.run(jobs)
}

/// Mean and standard error of cumulative regret per agent and round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretCurve {
    pub agents: Vec<AgentKind>,
    pub horizon: usize,
    pub instances: usize,
    /// `[agent][round]`.
    pub mean: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    /// Final cumulative regret of every run, `[agent][run]`.
    pub finals: Vec<Vec<f64>>,
}

/// Sample mean and standard error (sample standard deviation over `√R`).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl RegretCurve {
    /// Aggregates per-run curves `[run][agent][round]` in run order.
    pub fn from_runs(agents: &[AgentKind], horizon: usize, runs: &[Vec<Vec<f64>>]) -> Self {
        let mut mean = vec![vec![0.0; horizon]; agents.len()];
        let mut se = vec![vec![0.0; horizon]; agents.len()];
        let mut column = Vec::with_capacity(runs.len());
        for k in 0..agents.len() {
            for t in 0..horizon {
                column.clear();
                column.extend(runs.iter().map(|r| r[k][t]));
                (mean[k][t], se[k][t]) = mean_se(&column);
            }
        }
        let finals = (0..agents.len())
            .map(|k| runs.iter().map(|r| r[k].last().copied().unwrap_or(0.0)).collect())
            .collect();
        RegretCurve {
            agents: agents.to_vec(),
            horizon,
            instances: runs.len(),
            mean,
            se,
            finals,
        }
    }

    fn index(&self, kind: AgentKind) -> Option<usize> {
        self.agents.iter().position(|&a| a == kind)
    }

    /// Mean and SE of the final cumulative regret.
    pub fn final_regret(&self, kind: AgentKind) -> Option<(f64, f64)> {
        let k = self.index(kind)?;
        if self.horizon == 0 {
            return Some((0.0, 0.0));
        }
        Some((self.mean[k][self.horizon - 1], self.se[k][self.horizon - 1]))
    }

    /// CSV with header `round,agent,mean_regret,se,instances`.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["round", "agent", "mean_regret", "se", "instances"])?;
        for (k, agent) in self.agents.iter().enumerate() {
            for t in 0..self.horizon {
                w.write_record([
                    (t + 1).to_string(),
                    agent.name().to_string(),
                    self.mean[k][t].to_string(),
                    self.se[k][t].to_string(),
                    self.instances.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> Vec<AgentSummary> {
        self.agents
            .iter()
            .map(|&a| {
                let (mean, se) = self.final_regret(a).unwrap_or((f64::NAN, f64::NAN));
                AgentSummary {
                    agent: a,
                    final_mean_regret: mean,
                    final_se: se,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSummary {
    pub agent: AgentKind,
    pub final_mean_regret: f64,
    pub final_se: f64,
}

/// `TS` regret over the regret of another agent, by height.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub h: usize,
    pub agent: AgentKind,
    pub ratio: f64,
    pub se: f64,
}

/// Ratio `a/b` with a delta-method standard error from independent SEs.
pub fn ratio_with_se(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let r = a.0 / b.0;
    let rel = ((a.1 / a.0).powi(2) + (b.1 / b.0).powi(2)).sqrt();
    let se = if rel.is_finite() { r.abs() * rel } else { 0.0 };
    (r, se)
}

/// For every height in `heights`, runs `base` with all three agents on a
/// `b`-ary tree of that height and reports `TS` regret over the regret of
/// `HierTS` and `FlatTS`.
pub fn ratio_experiment(base: &RunConfig, heights: &[usize], jobs: Option<usize>) -> Result<Vec<RatioRow>> {
    let b = match base.tree {
        TreeSpec::Balanced { b, .. } => b,
        TreeSpec::File(_) => return Err(Error::Config("ratio experiments need a balanced tree".into())),
    };
    let mut rows = Vec::new();
    for &h in heights {
        let cfg = RunConfig {
            tree: TreeSpec::Balanced { b, h },
            agents: AgentKind::ALL.to_vec(),
            ..base.clone()
        };
        let curve = run_bayes_regret(&cfg, jobs)?;
        let ts = curve.final_regret(AgentKind::Ts).expect("TS is run");
        for kind in [AgentKind::HierTs, AgentKind::FlatTs] {
            let other = curve.final_regret(kind).expect("agent is run");
            let (ratio, se) = if ts.0 == 0.0 && other.0 == 0.0 {
                (1.0, 0.0)
            } else {
                ratio_with_se(ts, other)
            };
            rows.push(RatioRow {
                h,
                agent: kind,
                ratio,
                se,
            });
        }
    }
    Ok(rows)
}

pub fn write_ratio_csv(writer: impl Write, rows: &[RatioRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["h", "agent", "ratio", "se"])?;
    for r in rows {
        w.write_record([
            r.h.to_string(),
            r.agent.name().to_string(),
            r.ratio.to_string(),
            r.se.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary JSON of a regret experiment, including the bound for K-armed
/// problems.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub config: RunConfig,
    pub seed: u64,
    pub agents: Vec<AgentSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundSummary {
    pub c: f64,
    pub g: f64,
    pub sigma_max: f64,
    pub delta: f64,
    pub bound: f64,
    pub hierts_final_regret: Option<f64>,
}

impl ExperimentSummary {
    pub fn new(cfg: &RunConfig, curve: &RegretCurve) -> Result<Self> {
        let problem = cfg.resolve()?;
        let bound = match &problem.prior {
            PriorSpec::Scalar(p) if cfg.horizon > 0 => {
                let n = cfg.horizon;
                let report = complexity_term(&problem.tree, p, n, default_c(p))?;
                let delta = cfg.delta_or_default();
                Some(BoundSummary {
                    c: report.c,
                    g: report.g,
                    sigma_max: report.sigma_max,
                    delta,
                    bound: regret_bound(&report, n, delta, problem.tree.num_actions())?,
                    hierts_final_regret: curve.final_regret(AgentKind::HierTs).map(|v| v.0),
                })
            }
            _ => None,
        };
        Ok(ExperimentSummary {
            config: cfg.clone(),
            seed: cfg.seed,
            agents: curve.summary(),
            bound,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Final regrets keyed by agent name, handy for reports.
pub fn final_table(curve: &RegretCurve) -> BTreeMap<String, (f64, f64)> {
    curve
        .agents
        .iter()
        .filter_map(|&a| curve.final_regret(a).map(|v| (a.name().to_string(), v)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(prior: PriorScheme) -> RunConfig {
        RunConfig {
            prior,
            ..RunConfig::problem1(2, 2, 30, 6, 4)
        }
    }

    #[test]
    fn zero_variance_prior_gives_zero_regret() {
        let curve = run_bayes_regret(&small(PriorScheme::Constant { variance: 1e-300 }), Some(2)).unwrap();
        // All arms share the hyper-mean up to ~1e-150; argmax picks one of them.
        for k in 0..3 {
            assert!(curve.mean[k].iter().all(|&v| v.abs() < 1e-140));
        }
    }

    #[test]
    fn zero_horizon_gives_empty_curve() {
        let mut cfg = small(PriorScheme::Doubling);
        cfg.horizon = 0;
        let curve = run_bayes_regret(&cfg, None).unwrap();
        assert!(curve.mean.iter().all(Vec::is_empty));
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "round,agent,mean_regret,se,instances\n"
        );
    }

    #[test]
    fn curves_are_monotone_and_thread_independent() {
        let cfg = small(PriorScheme::Doubling);
        let a = run_bayes_regret(&cfg, Some(1)).unwrap();
        let b = run_bayes_regret(&cfg, Some(4)).unwrap();
        assert_eq!(a, b);
        for k in 0..3 {
            assert!(a.mean[k].windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn single_run_single_round_csv() {
        let mut cfg = small(PriorScheme::Doubling);
        cfg.horizon = 1;
        cfg.instances = 1;
        cfg.agents = vec![AgentKind::HierTs];
        let curve = run_bayes_regret(&cfg, None).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("1,HierTS,"));
        assert!(text.trim_end().ends_with(",0,1"));
    }

    #[test]
    fn mean_se_matches_hand_values() {
        let (m, s) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        let (r, se) = ratio_with_se((4.0, 0.4), (2.0, 0.1));
        assert_eq!(r, 2.0);
        assert!((se - 2.0 * (0.01f64 + 0.0025).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn summary_contains_bound() {
        let cfg = small(PriorScheme::Doubling);
        let curve = run_bayes_regret(&cfg, None).unwrap();
        let s = ExperimentSummary::new(&cfg, &curve).unwrap();
        let b = s.bound.as_ref().unwrap();
        assert!(b.bound > 0.0 && b.g > 0.0);
        assert!(s.to_json().contains("\"horizon\": 30"));
    }

    #[test]
    fn linear_experiment_runs() {
        let mut cfg = small(PriorScheme::Constant { variance: 1.0 });
        cfg.model = Model::Linear { d: 3 };
        let curve = run_bayes_regret(&cfg, None).unwrap();
        assert_eq!(curve.mean.len(), 3);
        assert!(ExperimentSummary::new(&cfg, &curve).unwrap().bound.is_none());
    }
}
