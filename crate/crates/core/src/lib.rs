//! Comparison of finite-state, time-inhomogeneous Markov chains.
//!
//! Two routes are implemented side by side:
//!
//! * the evolution-system route: build the transition operators `T_{s,t}`
//!   on a time grid, verify the forward/backward and integral identities,
//!   and compare two chains through the sign of
//!   `(Q^X_s - Q^Y_s) T^X_{s,t} f` (see [`comparison::check_theorem4`]);
//! * the martingale route: the linking process `T^X_{s,t} f(Y_s)` is a
//!   supermartingale under a generator inequality on the support of `Y_s`
//!   (see [`comparison::check_theorem7`] and its variants), with Monte Carlo
//!   tests of the underlying martingale problems in [`montecarlo`].
//!
//! Every certified verdict is cross-checked against an exact oracle
//! `mu_0 T_{0,t} f`.

pub mod comparison;
pub mod corpus;
pub mod error;
pub mod evolution;
pub mod expm;
pub mod generators;
pub mod montecarlo;
pub mod rates;
pub mod scenario;
pub mod selftest;
pub mod state;

pub use error::{Error, Result};

/// Dense real matrix used for rate matrices, kernels and transition blocks.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense real column vector; test functions and marginals.
pub type Vector = nalgebra::DVector<f64>;

/// Max-norm of a vector (the norm used for every residual in this crate).
pub fn max_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Entrywise max-norm of a matrix.
pub fn max_entry(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}
