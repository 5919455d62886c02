//! A tabular constrained-MDP planning laboratory.
//!
//! The crate bundles everything needed to study generative-model planning in
//! discounted CMDPs at desk scale:
//!
//! - [`mdp`]: the tabular data model, exact policy evaluation, value
//!   iteration, and occupancy-measure machinery;
//! - [`lp`]: an exact occupancy-measure LP oracle (dense simplex) providing
//!   ground-truth optima, the optimal dual variable, and the Slater constant;
//! - [`sampling`]: a seeded generative model with counter-based per-pair
//!   streams, plug-in empirical models, and reward perturbation;
//! - [`primal_dual`]: epsilon-net dual descent with best-response primal
//!   updates, plus the relaxed/strict parameter presets;
//! - [`hard_instance`]: the lower-bound CMDP family with closed-form optima;
//! - [`zeta`]: the doubling Slater-constant estimator;
//! - [`harness`] and [`plot`]: seeded experiment sweeps, CSV emission, and
//!   log-log scaling plots.
//!
//! Inner loops that are data-parallel (per-pair sampling, sweep cells) run
//! on rayon when the default `parallel` feature is enabled and sequentially
//! otherwise; results are identical either way.

pub mod error;
pub mod hard_instance;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod lp;
pub mod mdp;
pub mod par;
pub mod plot;
pub mod primal_dual;
pub mod rng;
pub mod sampling;
pub mod simplex;
pub mod zeta;

pub use error::{Error, Result};
pub use mdp::{Cmdp, MixturePolicy, OccupancyMeasure, Policy, ValuePair};
