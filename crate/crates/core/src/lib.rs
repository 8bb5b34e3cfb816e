//! Branching random walk estimators for the backward Wigner equation, with
//! a spectral reference solver and variance instrumentation.

pub mod brw;
pub mod cache;
pub mod config;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod kernel;
pub mod model;
pub mod quadrature;
pub mod reference;
pub mod rng;
pub mod selftest;
pub mod spa;
pub mod stats;
pub mod tables;
pub mod util;

pub use error::{Error, Result};
