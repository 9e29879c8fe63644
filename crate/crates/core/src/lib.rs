//! Simulation and nonparametric estimation for one-dimensional recurrent
//! diffusions `dX = σ(X) dW + b(X) dt`.
//!
//! The crate covers the invariant measure and recurrence of a model
//! ([`model`]), Euler–Maruyama paths with reproducible per-replicate noise
//! ([`sim`]), additive functionals and local times ([`functionals`]), the
//! deterministic equivalent and the adaptive Nadaraya–Watson drift
//! estimator ([`estimate`]), Monte Carlo tightness and rate diagnostics
//! ([`diagnostics`]) and the config-driven experiment runner ([`cli`]).

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod estimate;
pub mod functionals;
pub mod model;
pub mod par;
pub mod quad;
pub mod sim;
pub mod stats;
