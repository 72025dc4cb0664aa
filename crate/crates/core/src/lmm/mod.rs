//! Linear mixed-model engine for the three nested stability models.
//!
//! All models share the fixed effects `(intercept, month)`; they differ in
//! the lot-level random effects:
//!
//! | spec  | random effects                                   |
//! |-------|--------------------------------------------------|
//! | `Ris` | intercept and slope per lot, uncorrelated        |
//! | `Ri`  | intercept per lot                                |
//! | `Ols` | none (pooled regression)                         |
//!
//! Variance components are estimated by REML under nonnegativity
//! constraints, and a component estimated exactly at zero is recorded as a
//! boundary fit rather than silently dropped.

mod asycov;
mod design;
mod mme;
mod predict;
mod reml;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use asycov::{asycov, asycov_with, AsyCov, AsyCovMethod};
pub use design::{build_design, Design, ZColumn};
pub use mme::{mme_solve, MmeSolution, MmeSystem};
pub use predict::{contrast, contrast_variance, point_and_variance, predict, PredictionKind, PredictionRow};
pub use reml::{fit_reml, fit_reml_with, fit_with_theta, reml_criterion, FitOptions, ZERO_TOL_REL};

use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelSpec {
    /// Random intercept and uncorrelated random slope.
    Ris,
    /// Random intercept.
    Ri,
    /// Pooled regression.
    Ols,
}

impl ModelSpec {
    pub fn label(self) -> &'static str {
        match self {
            ModelSpec::Ris => "ris",
            ModelSpec::Ri => "ri",
            ModelSpec::Ols => "ols",
        }
    }

    /// Random variance components carried by the model.
    pub fn random_components(self) -> &'static [VarComp] {
        match self {
            ModelSpec::Ris => &[VarComp::LotIntercept, VarComp::LotSlope],
            ModelSpec::Ri => &[VarComp::LotIntercept],
            ModelSpec::Ols => &[],
        }
    }

    /// Number of covariance parameters (random components plus residual).
    pub fn n_cov_params(self) -> usize {
        self.random_components().len() + 1
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "ris" => Ok(ModelSpec::Ris),
            "ri" => Ok(ModelSpec::Ri),
            "ols" => Ok(ModelSpec::Ols),
            _ => Err(Error::InvalidArgument(format!("unknown model '{s}' (ris|ri|ols)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VarComp {
    LotIntercept,
    LotSlope,
    Residual,
}

impl VarComp {
    pub fn label(self) -> &'static str {
        match self {
            VarComp::LotIntercept => "sigma2_b0",
            VarComp::LotSlope => "sigma2_b1",
            VarComp::Residual => "sigma2_e",
        }
    }
}

/// Variance components. Components absent from a model are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub sigma2_b0: f64,
    pub sigma2_b1: f64,
    pub sigma2_e: f64,
}

impl Theta {
    pub fn new(sigma2_b0: f64, sigma2_b1: f64, sigma2_e: f64) -> Self {
        Self {
            sigma2_b0,
            sigma2_b1,
            sigma2_e,
        }
    }

    pub fn get(&self, c: VarComp) -> f64 {
        match c {
            VarComp::LotIntercept => self.sigma2_b0,
            VarComp::LotSlope => self.sigma2_b1,
            VarComp::Residual => self.sigma2_e,
        }
    }

    pub fn set(&mut self, c: VarComp, v: f64) {
        match c {
            VarComp::LotIntercept => self.sigma2_b0 = v,
            VarComp::LotSlope => self.sigma2_b1 = v,
            VarComp::Residual => self.sigma2_e = v,
        }
    }

    /// `sigma2_b0 / (sigma2_b0 + sigma2_e)`.
    pub fn vcfrac(&self) -> f64 {
        self.sigma2_b0 / (self.sigma2_b0 + self.sigma2_e)
    }

    /// Contributions of the lot intercept and lot slope to the marginal
    /// variance `sigma2_b0 + t^2 sigma2_b1 + sigma2_e` at month `t`.
    pub fn contributions_at(&self, t: f64) -> (f64, f64) {
        let slope = t * t * self.sigma2_b1;
        let total = self.sigma2_b0 + slope + self.sigma2_e;
        (self.sigma2_b0 / total, slope / total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotBlup {
    pub lot: String,
    pub b0: f64,
    pub b1: f64,
}

/// A fitted model together with what is needed to re-evaluate it at other
/// variance components.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub theta: Theta,
    pub beta: [f64; 2],
    pub blups: Vec<LotBlup>,
    /// Inverse MME coefficient matrix over `(beta, b)`; rows and columns of
    /// zero-variance random effects are zero.
    pub mme_inverse: DMatrix<f64>,
    pub reml_loglik: f64,
    pub asycov: Option<AsyCov>,
    /// Why `asycov` is missing, when it is.
    pub asycov_note: Option<String>,
    /// `(component, at boundary)` for each random component of the model.
    pub boundary: Vec<(VarComp, bool)>,
    pub n: usize,
    pub p: usize,
    pub design_fingerprint: u64,
    pub design: Design,
    pub y: Vec<f64>,
}

impl FitResult {
    pub fn is_boundary(&self, c: VarComp) -> bool {
        self.boundary.iter().any(|&(k, b)| k == c && b)
    }

    /// Random components estimated strictly inside the parameter space.
    pub fn interior_random(&self) -> Vec<VarComp> {
        self.boundary.iter().filter(|(_, b)| !b).map(|(c, _)| *c).collect()
    }

    pub fn lot_index(&self, lot: &str) -> Result<usize, Error> {
        self.design
            .lots
            .iter()
            .position(|l| l == lot)
            .ok_or_else(|| Error::UnknownLot(lot.to_string()))
    }

    pub fn lots(&self) -> &[String] {
        &self.design.lots
    }

    /// Serializable digest of the fit.
    pub fn summary(&self) -> FitSummary {
        FitSummary {
            model: self.spec.label().to_string(),
            n: self.n,
            p: self.p,
            sigma2_b0: self.spec.random_components().contains(&VarComp::LotIntercept).then_some(self.theta.sigma2_b0),
            sigma2_b1: self.spec.random_components().contains(&VarComp::LotSlope).then_some(self.theta.sigma2_b1),
            sigma2_e: self.theta.sigma2_e,
            beta0: self.beta[0],
            beta1: self.beta[1],
            reml_loglik: self.reml_loglik,
            aicc: crate::workflows::aicc_value(self).ok(),
            boundary: self.boundary.iter().map(|(c, b)| (c.label().to_string(), *b)).collect(),
            asycov_components: self
                .asycov
                .as_ref()
                .map(|a| a.components.iter().map(|c| c.label().to_string()).collect())
                .unwrap_or_default(),
            asycov: self
                .asycov
                .as_ref()
                .map(|a| {
                    (0..a.matrix.nrows())
                        .map(|i| (0..a.matrix.ncols()).map(|j| a.matrix[(i, j)]).collect())
                        .collect()
                })
                .unwrap_or_default(),
            asycov_note: self.asycov_note.clone(),
            blups: self.blups.clone(),
            design_fingerprint: format!("{:016x}", self.design_fingerprint),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: String,
    pub n: usize,
    pub p: usize,
    pub sigma2_b0: Option<f64>,
    pub sigma2_b1: Option<f64>,
    pub sigma2_e: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub reml_loglik: f64,
    pub aicc: Option<f64>,
    pub boundary: Vec<(String, bool)>,
    pub asycov_components: Vec<String>,
    pub asycov: Vec<Vec<f64>>,
    pub asycov_note: Option<String>,
    pub blups: Vec<LotBlup>,
    pub design_fingerprint: String,
}
