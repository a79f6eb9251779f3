//! Execution-feedback reinforcement learning for code performance optimization.
//!
//! A small autoregressive policy proposes rewritten programs, a sandbox runs
//! them against unit tests, and a four-tier reward ranks the candidates. The
//! policy is then updated with a pairwise hinge rank loss plus a cross-entropy
//! term on the best candidate.
//!
//! Module map:
//!
//! - [`corpus`]: task triples (slow program, fast program, tests) and prompts.
//! - [`sandbox`]: child-process execution with timeouts and repeated timing.
//! - [`reward`]: the four reward tiers.
//! - [`policy`]: tokenizer, the windowed feed-forward model and its gradients.
//! - [`sampling`]: beam search, temperature/top-k sampling, training candidates.
//! - [`trainer`]: supervised fine-tuning and the ranking RL loop.
//! - [`eval`]: inference-time evaluation and the %OPT / SP / RTR metrics.
//! - [`config`]: the run configuration file.

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod sampling;
pub mod sandbox;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
