//! Hierarchical Thompson sampling over tree-structured Gaussian bandits.
//!
//! The crate is organised bottom-up:
//!
//! - [`hierarchy`]: the tree, its priors and the JSON tree file format.
//! - [`posterior`]: exact recursive posteriors, scalar ([`posterior::mab`]) and
//!   contextual linear ([`posterior::linear`]), maintained by upward messages
//!   that are refreshed only along the path of the played action.
//! - [`agents`]: `HierTS` and the `TS` / `FlatTS` baselines.
//! - [`oracle`]: a dense joint Gaussian over every node parameter, used to
//!   certify the recursions. Never used by agents.
//! - [`envs`]: instance sampling, reward simulation and the feature-dataset
//!   bandit with priors fitted from training data.
//! - [`harness`]: Bayes regret experiments, bound calculator and the
//!   randomized verification suites.
//!
//! ```
//! use std::sync::Arc;
//! use hierts_core::agents::{Agent, AgentKind};
//! use hierts_core::hierarchy::{Hierarchy, PriorSpec, ScalarPrior};
//! use hierts_core::rng::{stream, StreamTag};
//!
//! # fn main() -> hierts_core::Result<()> {
//! let tree = Arc::new(Hierarchy::balanced(3, 2)?);
//! let prior = PriorSpec::Scalar(ScalarPrior::doubling(&tree, 0.0, 1.0)?);
//! let mut agent = Agent::new(AgentKind::HierTs, Arc::clone(&tree), &prior, stream(7, 0, StreamTag::Agent(0)))?;
//! let arm = agent.act(&[1.0]);
//! agent.update(arm, &[1.0], 0.3)?;
//! assert!(tree.is_action(arm));
//! # Ok(())
//! # }
//! ```

pub mod agents;
pub mod envs;
pub mod error;
pub mod harness;
pub mod hierarchy;
pub mod linalg;
pub mod oracle;
pub mod posterior;
pub mod rng;

pub use agents::{Agent, AgentKind};
pub use error::{Error, Result};
pub use hierarchy::{Hierarchy, LinearPrior, NodeId, PriorSpec, ScalarPrior};
pub use posterior::linear::LinearPosterior;
pub use posterior::mab::MabPosterior;
