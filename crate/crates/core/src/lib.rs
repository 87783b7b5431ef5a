//! Estimation and comparison of expected log predictive density (elpd) on
//! large data: cheap LOO surrogates corrected by exact LOO values on a small
//! simple random subsample through the survey-sampling difference estimator.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod io;
pub mod models;
pub mod numerics;
pub mod subsampling;
pub mod surrogates;

pub use error::{Error, Result};
