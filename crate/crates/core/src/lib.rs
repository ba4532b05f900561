//! Two-stage stochastic semidefinite programming with risk measures.
//!
//! The crate models parametric two-stage problems
//! `min { c•x + phi(z - T•x) : x in X }` where the recourse value
//! `phi(t) = min { q•y : W•y = t, y PSD }` is evaluated through its dual
//! `max { t'u : q - W'u PSD }`, and the scenario distribution enters through
//! a risk functional (expectation, expected excess, CVaR, VaR, upper
//! semideviation, or CVaR mixtures).
//!
//! Modules:
//! - [`model`]: symmetric-matrix containers, problem data, validation.
//! - [`sdp`]: block-structured SDP description, embedded interior-point
//!   solver, strict-feasibility margins, SDPA export.
//! - [`recourse`]: complete-recourse / strict-dual-feasibility checks and the
//!   recourse-function oracle (values, subgradients, Lipschitz bounds).
//! - [`risk`]: risk measures on finite discrete distributions.
//! - [`extensive`]: deterministic-equivalent (extensive form) builders and
//!   the big-M computation for the value-at-risk model.
//! - [`decompose`]: Benders-style cutting planes and branch-and-bound for the
//!   value-at-risk model.
//! - [`stability`]: perturbation experiments for the optimal value and
//!   solution set.
//! - [`instances`]: reference instances and random instance generators.

pub mod decompose;
pub mod error;
pub mod extensive;
pub mod instances;
pub mod model;
pub mod recourse;
pub mod risk;
pub mod sdp;
pub mod stability;

pub use error::Error;
