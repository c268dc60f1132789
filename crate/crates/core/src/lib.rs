//! Certified lower bounds on the finite-horizon value of an evaluation policy
//! when logged data may be confounded by an unobserved state that is redrawn
//! iid every step.
//!
//! Two bounds are provided:
//!
//! - [`fqe::confounded_fqe`]: tabular fitted-Q evaluation where each Bellman
//!   backup is replaced by a small linear program over admissible importance
//!   weights.
//! - [`robust::robust_value_iteration`]: an s-rectangular robust MDP over the
//!   full-information models (binary confounder) consistent with the data and
//!   a `(Γ, Δ, p)` sensitivity model.
//!
//! The remaining modules hold the tabular MDP machinery, the confounded model
//! with its marginals, data simulation and estimation, benchmark environments
//! and the experiment harness used by the `confope` CLI.

pub mod benchmarks;
pub mod confounded;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod fqe;
pub mod lp;
pub mod mdp;
pub mod plot;
pub mod robust;
pub mod sensitivity;

pub use error::{Error, Result};
