//! Experiment configuration.
//!
//! ```json
//! {
//!   "tree": {"balanced": {"b": 5, "h": 2}},
//!   "prior": {"scheme": "doubling"},
//!   "hyper_mean": 0.0,
//!   "noise_std": 1.0,
//!   "horizon": 500,
//!   "instances": 100,
//!   "agents": ["hierts", "flatts", "ts"],
//!   "seed": 1,
//!   "model": "k-armed"
//! }
//! ```
//!
//! `tree` may instead be `{"file": "tree.json"}`, resolved relative to the
//! config file. Prior schemes: `{"scheme": "constant", "variance": v}`,
//! `{"scheme": "doubling"}`, `{"scheme": "explicit", "node_variance": {"1": v, ...}}`
//! and `{"scheme": "file"}` (the prior section of the tree file). The linear
//! model `{"linear": {"d": 4}}` uses `σ₀ᵢ² I` node covariances unless the
//! tree file supplies matrices.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::agents::AgentKind;
use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, LinearPrior, NodeId, PriorSpec, ScalarPrior, TreeFile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeSpec {
    Balanced { b: usize, h: usize },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorScheme {
    Constant { variance: f64 },
    Doubling,
    Explicit { node_variance: BTreeMap<usize, f64> },
    File,
}

impl Default for PriorScheme {
    fn default() -> Self {
        PriorScheme::Constant { variance: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Model {
    #[default]
    #[serde(rename = "k-armed")]
    KArmed,
    #[serde(rename = "linear")]
    Linear { d: usize },
}

fn default_noise_std() -> f64 {
    1.0
}

fn default_agents() -> Vec<AgentKind> {
    AgentKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tree: TreeSpec,
    #[serde(default)]
    pub prior: PriorScheme,
    #[serde(default)]
    pub hyper_mean: f64,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    pub horizon: usize,
    pub instances: usize,
    #[serde(default = "default_agents")]
    pub agents: Vec<AgentKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: Model,
    /// Confidence parameter of the regret bound, `1/n` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Directory that relative tree paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// A resolved hierarchy with its prior.
#[derive(Debug, Clone)]
pub struct Problem {
    pub tree: Arc<Hierarchy>,
    pub prior: PriorSpec,
}

impl RunConfig {
    /// Problem 1: `σ₀ᵢ² = 1` on a balanced `b`-ary tree of height `h`.
    pub fn problem1(b: usize, h: usize, horizon: usize, instances: usize, seed: u64) -> Self {
        RunConfig {
            tree: TreeSpec::Balanced { b, h },
            prior: PriorScheme::Constant { variance: 1.0 },
            hyper_mean: 0.0,
            noise_std: 1.0,
            horizon,
            instances,
            agents: default_agents(),
            seed,
            model: Model::KArmed,
            delta: None,
            base_dir: None,
        }
    }

    /// Problem 2: `σ₀ᵢ² = 2^{hᵢ}`.
    pub fn problem2(b: usize, h: usize, horizon: usize, instances: usize, seed: u64) -> Self {
        RunConfig {
            prior: PriorScheme::Doubling,
            ..Self::problem1(b, h, horizon, instances, seed)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 {
            return Err(Error::Config("`instances` must be at least 1".into()));
        }
        if self.agents.is_empty() {
            return Err(Error::Config("`agents` must not be empty".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std > 0.0) {
            return Err(Error::Config("`noise_std` must be positive".into()));
        }
        if !self.hyper_mean.is_finite() {
            return Err(Error::Config("`hyper_mean` must be finite".into()));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config("`delta` must lie in (0, 1]".into()));
            }
        }
        if let Model::Linear { d } = self.model {
            if d == 0 {
                return Err(Error::Config("linear model needs d ≥ 1".into()));
            }
        }
        if let TreeSpec::Balanced { b, h } = self.tree {
            if b < 2 || h < 1 {
                return Err(Error::Config("balanced tree needs b ≥ 2 and h ≥ 1".into()));
            }
            if (b as f64).powi(h as i32) > 1e6 {
                return Err(Error::Config("balanced tree is too large".into()));
            }
        }
        if let PriorScheme::Constant { variance } = self.prior {
            if !(variance.is_finite() && variance > 0.0) {
                return Err(Error::Config("prior variance must be positive".into()));
            }
        }
        Ok(())
    }

    /// Confidence parameter, `1/n` by default.
    pub fn delta_or_default(&self) -> f64 {
        self.delta.unwrap_or(1.0 / self.horizon.max(1) as f64)
    }

    pub fn dim(&self) -> usize {
        match self.model {
            Model::KArmed => 1,
            Model::Linear { d } => d,
        }
    }

    fn tree_file(&self) -> Result<Option<TreeFile>> {
        match &self.tree {
            TreeSpec::Balanced { .. } => Ok(None),
            TreeSpec::File(p) => {
                let path = match &self.base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                Ok(Some(TreeFile::from_path(path)?))
            }
        }
    }

    /// Build the hierarchy and prior.
    pub fn resolve(&self) -> Result<Problem> {
        self.validate()?;
        let file = self.tree_file()?;
        let tree = match (&self.tree, &file) {
            (TreeSpec::Balanced { b, h }, _) => Hierarchy::balanced(*b, *h)?,
            (_, Some(f)) => f.hierarchy()?,
            _ => unreachable!(),
        };
        let scalar = match &self.prior {
            PriorScheme::Constant { variance } => Some(ScalarPrior::constant(
                &tree,
                *variance,
                self.hyper_mean,
                self.noise_std,
            )?),
            PriorScheme::Doubling => Some(ScalarPrior::doubling(&tree, self.hyper_mean, self.noise_std)?),
            PriorScheme::Explicit { node_variance } => {
                for &id in node_variance.keys() {
                    if !tree.contains(NodeId(id)) {
                        return Err(Error::Config(format!("explicit prior names unknown node {id}")));
                    }
                }
                let v = tree
                    .nodes()
                    .map(|id| {
                        node_variance
                            .get(&id.0)
                            .copied()
                            .ok_or_else(|| Error::Config(format!("explicit prior misses node {id}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(ScalarPrior::new(&tree, self.hyper_mean, v, self.noise_std)?)
            }
            PriorScheme::File => None,
        };
        let prior = match (scalar, self.model) {
            (Some(p), Model::KArmed) => PriorSpec::Scalar(p),
            (Some(p), Model::Linear { d }) => {
                let mut lin = LinearPrior::isotropic(&tree, &p, d)?;
                lin.hyper_mean = DVector::from_element(d, self.hyper_mean);
                PriorSpec::Linear(lin)
            }
            (None, model) => {
                let f = file
                    .as_ref()
                    .ok_or_else(|| Error::Config("prior scheme `file` needs a tree file".into()))?;
                let p = f
                    .prior(&tree)?
                    .ok_or_else(|| Error::Config("tree file has no prior section".into()))?;
                if matches!(p, PriorSpec::Linear(_)) && (p.dim() != self.dim() || model == Model::KArmed) {
                    return Err(Error::Config(format!(
                        "tree file prior has dimension {}, model needs {}",
                        p.dim(),
                        self.dim()
                    )));
                }
                match (p, model) {
                    (PriorSpec::Scalar(s), Model::Linear { d }) => {
                        PriorSpec::Linear(LinearPrior::isotropic(&tree, &s, d)?)
                    }
                    (p, _) => p,
                }
            }
        };
        Ok(Problem {
            tree: Arc::new(tree),
            prior,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let cfg = RunConfig::from_json(
            r#"{"tree": {"balanced": {"b": 5, "h": 2}}, "prior": {"scheme": "doubling"},
                "horizon": 500, "instances": 100, "agents": ["hierts", "ts"], "seed": 9,
                "model": "k-armed"}"#,
        )
        .unwrap();
        assert_eq!(cfg.tree, TreeSpec::Balanced { b: 5, h: 2 });
        assert_eq!(cfg.agents, vec![AgentKind::HierTs, AgentKind::Ts]);
        assert_eq!(cfg.delta_or_default(), 1.0 / 500.0);
        let problem = cfg.resolve().unwrap();
        assert_eq!(problem.tree.num_actions(), 25);
        match problem.prior {
            PriorSpec::Scalar(p) => assert_eq!(p.variance(NodeId::ROOT), 4.0),
            _ => panic!("expected scalar prior"),
        }
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn linear_model_config() {
        let cfg = RunConfig::from_json(
            r#"{"tree": {"balanced": {"b": 2, "h": 2}}, "horizon": 10, "instances": 2,
                "model": {"linear": {"d": 3}}, "hyper_mean": 0.5}"#,
        )
        .unwrap();
        let p = cfg.resolve().unwrap();
        assert_eq!(p.prior.dim(), 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err =
            RunConfig::from_json("{\n\"tree\": {\"balanced\": {\"b\": 2, \"h\": 2}},\n\"horizon\": -1}").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(RunConfig::from_json("{not json").is_err());
        let zero = r#"{"tree": {"balanced": {"b": 2, "h": 2}}, "horizon": 5, "instances": 0}"#;
        assert!(matches!(RunConfig::from_json(zero), Err(Error::Config(_))));
        let unknown = r#"{"tree": {"balanced": {"b": 2, "h": 2}}, "horizon": 5, "instances": 1, "colour": 1}"#;
        assert!(RunConfig::from_json(unknown).is_err());
    }

    #[test]
    fn explicit_prior_must_cover_every_node() {
        let mut cfg = RunConfig::problem1(2, 1, 5, 1, 0);
        cfg.prior = PriorScheme::Explicit {
            node_variance: BTreeMap::from([(1, 1.0), (2, 0.5)]),
        };
        assert!(cfg.resolve().is_err());
        cfg.prior = PriorScheme::Explicit {
            node_variance: BTreeMap::from([(1, 1.0), (2, 0.5), (3, 0.25)]),
        };
        assert!(cfg.resolve().is_ok());
    }

    #[test]
    fn tree_file_resolves_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        let tree = Hierarchy::balanced(3, 1).unwrap();
        let prior = PriorSpec::Scalar(ScalarPrior::constant(&tree, 0.5, 0.0, 1.0).unwrap());
        std::fs::write(
            dir.path().join("t.json"),
            TreeFile::from_parts(&tree, Some(&prior)).to_json(),
        )
        .unwrap();
        let cfg_path = dir.path().join("c.json");
        std::fs::write(
            &cfg_path,
            r#"{"tree": {"file": "t.json"}, "prior": {"scheme": "file"}, "horizon": 3, "instances": 1}"#,
        )
        .unwrap();
        let problem = RunConfig::from_path(&cfg_path).unwrap().resolve().unwrap();
        assert_eq!(problem.tree.num_actions(), 3);
        match problem.prior {
            PriorSpec::Scalar(p) => assert_eq!(p.variance(NodeId(2)), 0.5),
            _ => panic!("expected scalar prior"),
        }
    }
}
