//! Numerical toolkit for Hermitian matrix Gaussian series.
//!
//! A matrix Gaussian series is a random Hermitian matrix `X = sum_i g_i H_i`
//! with fixed Hermitian coefficients `H_i` and independent standard normal
//! weights `g_i`. This crate computes the concentration parameters of such a
//! series (matrix variance, standard deviation sigma_q, alignment parameter
//! w_q, the delta parameter, weak variance), estimates trace moments and
//! spectral norms by seeded Monte Carlo, and evaluates moment inequalities
//! that relate the two.
//!
//! Everything stochastic is driven by counter-based substreams keyed on
//! `(seed, index)`, so results are reproducible across runs, machines, and
//! any parallel schedule.

pub mod bounds;
pub mod ensembles;
pub mod error;
pub mod inequalities;
pub mod isotropy;
pub mod matalg;
pub mod moments;
pub mod parameters;
pub mod report;
pub mod rng;
pub mod tol;

pub use error::{Error, Result};
pub use matalg::{ComplexMatrix, EigenDecomposition, Exponent, HermMatrix, UnitaryMatrix};
