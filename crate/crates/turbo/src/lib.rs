//! Gaussian-process surrogates and trust-region Bayesian optimization over
//! the unit hypercube.
//!
//! [`gp`] holds the surrogate model (Matérn-5/2 or RBF ARD kernel, exact
//! posterior, marginal-likelihood fitting, posterior sampling). [`trust_region`]
//! holds the local trust-region state machine and candidate generation, and
//! [`optimizer`] runs the multi-region loop with Thompson-sampled batches.

pub mod design;
pub mod error;
pub mod gp;
pub mod optimizer;
pub mod trust_region;

pub use error::{Error, ObjectiveError, Result};
pub use gp::{Dataset, GpHyperparams, KernelKind, Observation};
pub use optimizer::{optimize, propose_batch, write_history_csv, HistoryRecord, OptimizeResult, PartialRun, Proposal, TurboConfig};
pub use trust_region::TrustRegion;
