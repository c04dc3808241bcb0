//! Bayesian spatial regression on continuously indexed domains with a
//! multivariate Gaussian random field (MGRF) prior that models the
//! correlation between covariates and the spatial effect.

pub mod baselines;
pub mod cli_io;
pub mod error;
pub mod mesh_fem;
pub mod mgrf_prior;
pub mod pc_prior;
pub mod sampler;
pub mod sim_harness;
pub mod sparse_la;
pub mod spde;

pub use error::{Error, Result};
