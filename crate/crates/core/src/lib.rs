//! Finite-volume laboratory for β-log-gas (Dyson) and β-Riesz interacting
//! diffusions on the line.
//!
//! The crate is organised bottom-up:
//!
//! * [`config_space`] – finite point configurations, restriction to windows and
//!   the L²-transportation (matching) distances.
//! * [`potentials`] – conditional Gibbs Hamiltonians with analytic gradients and
//!   Hessian quadratic forms, plus a random convexity certifier.
//! * [`gibbs`] – Metropolis / MALA samplers for the conditional measures and the
//!   finite circular β-ensemble.
//! * [`dynamics`] – reflected Euler–Maruyama integration with synchronous
//!   coupling.
//! * [`semigroup`] – cylinder observables, Monte-Carlo heat-semigroup estimates
//!   and statistical checks of the curvature inequalities.
//! * [`flow`] – grid Fokker–Planck solver, JKO scheme and entropy functionals.
//!
//! Generator convention used everywhere: `A = ½Δ − ½∇Ψ·∇` on `[-r, r]^k` with
//! reflection at the walls.

pub mod config_space;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod flow;
pub mod gibbs;
pub mod io;
pub mod potentials;
pub mod rng;
pub mod semigroup;
pub mod stats;
pub mod suite;

mod chebyshev;

pub use config_space::{Configuration, ExteriorConfiguration};
pub use error::{Error, Result};
pub use potentials::{ConditionalPotential, InteractionKind};
