//! ruin-lab: simulation and numerical approximation toolkit for discrete-time
//! insurance surplus processes with random income and random return factors,
//! and for their continuous-time generalized Ornstein-Uhlenbeck (GOU) limits.
//!
//! The discrete model is the random-coefficient autoregression
//!
//! ```text
//! theta_k = xi_k + theta_{k-1} * rho_k,    theta_0 = y >= 0,
//! ```
//!
//! where `xi_k` are i.i.d. net payments (losses) and `rho_k` are i.i.d.
//! positive return factors, independent of each other. Run at `n` steps per
//! unit time with suitably re-normalized step laws, the process converges
//! weakly to a GOU process
//!
//! ```text
//! Y_t = e^{R_t} ( y + int_0^t e^{-R_s} dX_s ),
//! ```
//!
//! driven by two independent Levy processes. The crate provides:
//!
//! * [`rng`] — reproducible splittable random streams,
//! * [`distributions`] — base step laws, samplers, moments, tail classes,
//! * [`rescale`] — the per-`n` step renormalization and the exponential-moment
//!   conditions gating the limit results,
//! * [`discrete`] — surplus path simulation, ruin scanning, Monte Carlo
//!   estimators, and an exact moment recursion,
//! * [`gou`] — diffusion and stable-driver schemes for the limit process,
//! * [`limits`] — closed-form/ODE/quadrature limit quantities (ultimate ruin
//!   probability, discounted penalty, moment recursion),
//! * [`harness`] — convergence experiments and report emission,
//! * [`cli`] — config parsing and subcommand dispatch for the `ruin-lab`
//!   binary.

// Validation uses negated comparisons (`!(x > 0.0)`) so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod discrete;
pub mod distributions;
pub mod gou;
pub mod harness;
pub mod limits;
pub mod rescale;
pub mod rng;

/// Crate-wide error type.
///
/// `Invalid` covers configuration, schema, and parameter-domain problems
/// (CLI exit code 1). `Numerical` covers failed convergence gates in the
/// quadrature/ODE kernels and refused experiments (CLI exit code 2).
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    Invalid(String),
    Numerical(String),
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::Invalid(msg) => write!(f, "invalid input: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
