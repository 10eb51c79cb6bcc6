//! Policy-regularized distributionally robust RL with linear function
//! approximation.
//!
//! The crate trains on a nominal (source) kernel and evaluates on a perturbed
//! (target) kernel. Modules, bottom up:
//!
//! - [`numerics`]: Gram matrices, ridge regression, UCB bonuses.
//! - [`duality`]: the scalar dual for TV-robust and TV-regularized backups.
//! - [`policy`]: KL-regularized softmax policies and reference policies.
//! - [`env`]: the five-state simulated MDP, the American put option, and
//!   generic tabular factor models.
//! - [`agents`]: DR-RPO and the greedy LSVI-UCB baselines.
//! - [`oracle`]: exact robust planning on tabular models.
//! - [`harness`]: sweep configs, evaluation and CSV output.

pub mod agents;
pub mod duality;
pub mod env;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod oracle;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
