//! Episodic sparse linear MDPs, an explore-then-commit Lasso fitted-Q-iteration
//! agent with exact regret accounting, and a generator for a lower-bound
//! family of hard instances.
//!
//! The modules build on each other bottom-up:
//!
//! - [`linmdp`]: model types, validation, random instances, simulation.
//! - [`dp`]: exact backward induction, occupancy and feature covariance.
//! - [`sparsereg`]: Lasso by coordinate descent, eigenvalues, restricted
//!   eigenvalue intervals.
//! - [`fqi`]: fold partitioning, Lasso fitted-Q-iteration, greedy policies.
//! - [`agents`]: the online explore-then-commit agent and baselines.
//! - [`hardbench`]: the hard-instance family and its diagnostics.
//! - [`harness`]: seeded replicate sweeps, CSV output, slope fitting.
//! - [`cli`]: the command-line front end used by the `sparse-rl` binary.

pub mod agents;
pub mod cli;
pub mod dp;
pub mod error;
pub mod fqi;
pub mod hardbench;
pub mod harness;
pub mod linmdp;
pub mod sparsereg;

pub use error::{Error, Result};
