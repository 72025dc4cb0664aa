//! Random-lot stability shelf-life inference.
//!
//! The crate fits the three nested stability models (random intercept and
//! slope, random intercept, pooled regression) by bounded REML, forms
//! lot-specific conditional-mean lower confidence limits from EBLUPs, and
//! compares denominator degrees-of-freedom methods (containment, residual,
//! Satterthwaite) for those limits. Around that engine sit the comparator
//! workflows used in practice (pooled OLS, a fixed-lot ICH Q1E-style
//! ANCOVA, a 10% variance-contribution reduction rule and an AICc step-down),
//! a Monte Carlo laboratory for their operating characteristics, and
//! known-parameter benchmarks.
//!
//! Module map:
//!
//! * [`data`]: dataset ingestion and CSV tables.
//! * [`num`]: special functions, rank, multivariate-Normal orthant
//!   probabilities, optimizer and reproducible random streams.
//! * [`lmm`]: design matrices, REML, mixed-model equations and predictions.
//! * [`ddf`]: containment, residual and Satterthwaite degrees of freedom.
//! * [`decision`]: band margins, first-crossing months and expiry support.
//! * [`workflows`]: the six analysis approaches.
//! * [`sim`]: simulation engine and figure/table aggregations.
//! * [`benchmark`]: known-variance baselines.
//! * [`rebuild`]: Satterthwaite reconstruction report for a scored point.

pub mod benchmark;
pub mod data;
pub mod ddf;
pub mod decision;
pub mod error;
pub mod lmm;
pub mod num;
pub mod rebuild;
pub mod sim;
pub mod workflows;

pub use error::{Error, Result};
