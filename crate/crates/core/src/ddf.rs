//! Denominator degrees of freedom for predicted means.
//!
//! * containment: `n - rank([X Z])`, a design constant;
//! * residual: `n - rank(X)`;
//! * Satterthwaite: `nu = 2 v^2 / (g' Omega g)` where `v` is the
//!   prediction-error variance, `g` its finite-difference gradient in the
//!   variance components, and `Omega` their asymptotic covariance.
//!
//! Satterthwaite inference drops variance components estimated at zero. When
//! every random component is at zero the model has collapsed to pooled
//! regression and the residual DDF is reported instead, flagged as a
//! reversion. The jump this produces near the boundary is intended.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::lmm::{contrast, contrast_variance, AsyCov, Design, FitResult, MmeSystem, PredictionKind, Theta, VarComp};
use crate::num::linalg::{matrix_rank, DEFAULT_RANK_TOL};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DdfMethod {
    Contain,
    Sat,
    Residual,
}

impl DdfMethod {
    pub fn label(self) -> &'static str {
        match self {
            DdfMethod::Contain => "CONTAIN",
            DdfMethod::Sat => "SAT",
            DdfMethod::Residual => "RESIDUAL",
        }
    }
}

impl fmt::Display for DdfMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DdfMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "contain" | "containment" => Ok(DdfMethod::Contain),
            "sat" | "satterthwaite" => Ok(DdfMethod::Sat),
            "residual" => Ok(DdfMethod::Residual),
            _ => Err(Error::InvalidArgument(format!("unknown DDF method '{s}' (contain|sat|residual)"))),
        }
    }
}

/// A predicted mean to attach a DDF to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    /// Lot index in the fit's design; required for conditional targets.
    pub lot: Option<usize>,
    pub month: f64,
    pub kind: PredictionKind,
}

impl Target {
    pub fn conditional(lot: usize, month: f64) -> Self {
        Self {
            lot: Some(lot),
            month,
            kind: PredictionKind::Conditional,
        }
    }

    pub fn marginal(month: f64) -> Self {
        Self {
            lot: None,
            month,
            kind: PredictionKind::Marginal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdfReport {
    pub method: DdfMethod,
    pub nu: f64,
    pub v_hat: f64,
    /// Components the gradient is taken over (empty unless Satterthwaite).
    pub components: Vec<VarComp>,
    pub gradient: Vec<f64>,
    pub quad_form: f64,
    /// True when Satterthwaite fell back to the residual DDF because every
    /// random component sits on the boundary.
    pub reverted: bool,
}

impl DdfReport {
    fn constant(method: DdfMethod, nu: usize, v_hat: f64, reverted: bool) -> Self {
        Self {
            method,
            nu: nu as f64,
            v_hat,
            components: Vec::new(),
            gradient: Vec::new(),
            quad_form: 0.0,
            reverted,
        }
    }
}

fn positive_df(n: usize, rank: usize) -> Result<usize> {
    if n > rank {
        Ok(n - rank)
    } else {
        Err(Error::Dataset(format!("no degrees of freedom left: n = {n}, rank = {rank}")))
    }
}

/// `n - rank([X Z])`.
pub fn containment_ddf(design: &Design) -> Result<usize> {
    positive_df(design.n(), matrix_rank(&design.xz(), DEFAULT_RANK_TOL)?)
}

/// `n - rank(X)`.
pub fn residual_ddf(design: &Design) -> Result<usize> {
    positive_df(design.n(), matrix_rank(&design.x, DEFAULT_RANK_TOL)?)
}

/// `2 v^2 / (g' Omega g)`.
pub fn satt_df_from_components(v: f64, g: &[f64], omega: &DMatrix<f64>) -> Result<f64> {
    if g.len() != omega.nrows() || !omega.is_square() {
        return Err(Error::InvalidArgument(format!(
            "gradient length {} does not match a {}x{} covariance",
            g.len(),
            omega.nrows(),
            omega.ncols()
        )));
    }
    if !(v > 0.0) {
        return Err(Error::SattUnavailable(format!("prediction variance {v} is not positive")));
    }
    let g = DVector::from_column_slice(g);
    let q = (g.transpose() * omega * &g)[(0, 0)];
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::SattUnavailable(format!("quadratic form g'Omega g = {q} is not positive")));
    }
    Ok(2.0 * v * v / q)
}

/// Finite-difference step for component `c` at `theta`.
pub fn fd_step(theta: &Theta, c: VarComp) -> f64 {
    let total = theta.sigma2_b0 + theta.sigma2_b1 + theta.sigma2_e;
    (1e-4 * theta.get(c)).max(1e-7 * total)
}

enum Difference {
    Central { plus: DMatrix<f64>, minus: DMatrix<f64>, h: f64 },
    Forward { plus: DMatrix<f64>, h: f64 },
}

/// Satterthwaite machinery for one fit: the inverse MME matrices at the
/// perturbed variance components are built once and shared by all targets.
pub struct SattEvaluator<'a> {
    fit: &'a FitResult,
    state: SattState,
}

enum SattState {
    Reverted(usize),
    Ready { asycov: AsyCov, diffs: Vec<Difference> },
    Unavailable(String),
}

impl<'a> SattEvaluator<'a> {
    pub fn new(fit: &'a FitResult) -> Result<Self> {
        Self::with_asycov(fit, fit.asycov.clone())
    }

    /// Uses `asycov` in place of the fit's own, e.g. a covariance reported
    /// by other software.
    pub fn with_asycov(fit: &'a FitResult, asycov: Option<AsyCov>) -> Result<Self> {
        if fit.interior_random().is_empty() {
            return Ok(Self {
                fit,
                state: SattState::Reverted(residual_ddf(&fit.design)?),
            });
        }
        let asycov = match asycov {
            Some(a) => a,
            None => {
                let why = fit.asycov_note.clone().unwrap_or_else(|| "no asymptotic covariance".into());
                return Ok(Self {
                    fit,
                    state: SattState::Unavailable(why),
                });
            }
        };
        let sys = MmeSystem::new(&fit.design);
        let mut diffs = Vec::with_capacity(asycov.components.len());
        for &c in &asycov.components {
            let h = fd_step(&fit.theta, c);
            let mut up = fit.theta;
            up.set(c, fit.theta.get(c) + h);
            let plus = sys.inverse(&up)?;
            if fit.theta.get(c) - h < 0.0 {
                diffs.push(Difference::Forward { plus, h });
            } else {
                let mut down = fit.theta;
                down.set(c, fit.theta.get(c) - h);
                diffs.push(Difference::Central {
                    plus,
                    minus: sys.inverse(&down)?,
                    h,
                });
            }
        }
        Ok(Self {
            fit,
            state: SattState::Ready { asycov, diffs },
        })
    }

    pub fn is_reverted(&self) -> bool {
        matches!(self.state, SattState::Reverted(_))
    }

    pub fn report(&self, target: &Target) -> Result<DdfReport> {
        let lambda = contrast(&self.fit.design, target.lot, target.month, target.kind)?;
        let v = contrast_variance(&self.fit.mme_inverse, &lambda);
        match &self.state {
            SattState::Reverted(df) => Ok(DdfReport::constant(DdfMethod::Residual, *df, v, true)),
            SattState::Unavailable(why) => Err(Error::SattUnavailable(why.clone())),
            SattState::Ready { asycov, diffs } => {
                let gradient: Vec<f64> = diffs
                    .iter()
                    .map(|d| match d {
                        Difference::Central { plus, minus, h } => {
                            (contrast_variance(plus, &lambda) - contrast_variance(minus, &lambda)) / (2.0 * h)
                        }
                        Difference::Forward { plus, h } => (contrast_variance(plus, &lambda) - v) / h,
                    })
                    .collect();
                let nu = satt_df_from_components(v, &gradient, &asycov.matrix)?;
                let g = DVector::from_column_slice(&gradient);
                Ok(DdfReport {
                    method: DdfMethod::Sat,
                    nu,
                    v_hat: v,
                    components: asycov.components.clone(),
                    gradient,
                    quad_form: (g.transpose() * &asycov.matrix * &g)[(0, 0)],
                    reverted: false,
                })
            }
        }
    }
}

/// Satterthwaite DDF for a single target.
pub fn satterthwaite_ddf(fit: &FitResult, target: &Target) -> Result<DdfReport> {
    SattEvaluator::new(fit)?.report(target)
}

/// DDF for a target under `method`.
pub fn ddf_report(fit: &FitResult, target: &Target, method: DdfMethod) -> Result<DdfReport> {
    let v = contrast_variance(
        &fit.mme_inverse,
        &contrast(&fit.design, target.lot, target.month, target.kind)?,
    );
    match method {
        DdfMethod::Contain => Ok(DdfReport::constant(method, containment_ddf(&fit.design)?, v, false)),
        DdfMethod::Residual => Ok(DdfReport::constant(method, residual_ddf(&fit.design)?, v, false)),
        DdfMethod::Sat => satterthwaite_ddf(fit, target),
    }
}
