//! Estimation engine for measuring multinational profit shifting from
//! country-by-country reporting (CBCR) panels.
//!
//! The crate covers the full pipeline: CSV ingestion with data corrections,
//! effective-tax-rate construction, semi-elasticity regressions
//! (linear/quadratic/logarithmic and other non-linear bases) with clustered
//! standard errors and BIC offset search, counterfactual profits and
//! formulary redistribution, a misalignment model, gradient-boosted
//! imputation of missing activity, bootstrap confidence intervals, and
//! quadratic-cost (Hines-Rice) diagnostics.

pub mod boot;
pub mod config;
pub mod error;
pub mod etr;
pub mod hinesrice;
pub mod impute;
pub mod ingest;
pub mod misalign;
pub mod ols;
pub mod pipeline;
pub mod regress;
pub mod shift;
pub mod synth;

pub use error::{Error, Result};
