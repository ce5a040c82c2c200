//! Debiased estimating-equation Mendelian randomization (DEEM) from GWAS summary statistics.
//!
//! Pipeline: [`sumstats`] parses and harmonizes exposure, outcome and supplemental statistics;
//! [`ldcore`] supplies block-diagonal LD; [`selection`] picks instruments on the supplemental sample;
//! [`covest`] builds the covariance bundle; [`estimators`] solves the estimating equation and combines
//! it with the supplemental-sample ratio estimator. [`simkit`] generates synthetic data and runs
//! replicate studies.

pub mod covest;
pub mod error;
pub mod estimators;
pub mod io;
pub mod ldcore;
pub mod selection;
pub mod simkit;
pub mod sumstats;

pub use error::{DeemError, Result};
pub use estimators::{fit, run_deem, run_deem_with, DeemConfig, FitOptions, Mode, MrEstimate};
