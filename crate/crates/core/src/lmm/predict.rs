//! Conditional and marginal mean predictions with confidence limits.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Design, FitResult, VarComp};
use crate::data::{Cell, TableRecord};
use crate::num::t_quantile;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredictionKind {
    /// Lot-specific mean `x(t)'beta + z_i(t)'b_i`.
    Conditional,
    /// Population mean `x(t)'beta`.
    Marginal,
}

impl PredictionKind {
    pub fn label(self) -> &'static str {
        match self {
            PredictionKind::Conditional => "conditional",
            PredictionKind::Marginal => "marginal",
        }
    }
}

impl fmt::Display for PredictionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PredictionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "conditional" => Ok(PredictionKind::Conditional),
            "marginal" => Ok(PredictionKind::Marginal),
            _ => Err(Error::InvalidArgument(format!("unknown prediction kind '{s}'"))),
        }
    }
}

/// One predicted mean with its one-sided limits at level `1 - alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    /// `None` for marginal predictions.
    pub lot: Option<String>,
    pub month: f64,
    pub pred: f64,
    pub se_pred: f64,
    pub ddf: f64,
    /// `pred - t(1 - alpha, ddf) se_pred`.
    pub lcl: f64,
    /// `pred + t(1 - alpha, ddf) se_pred`, for upper-sided criteria.
    pub ucl: f64,
    pub kind: PredictionKind,
    pub alpha: f64,
}

impl PredictionRow {
    /// Builds a row from a point prediction, its standard error and a DDF.
    pub fn from_parts(
        lot: Option<String>,
        month: f64,
        kind: PredictionKind,
        pred: f64,
        se_pred: f64,
        ddf: f64,
        alpha: f64,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if !(ddf > 0.0) {
            return Err(Error::InvalidArgument(format!("ddf must be positive, got {ddf}")));
        }
        let q = t_quantile(1.0 - alpha, ddf)?;
        Ok(Self {
            lot,
            month,
            pred,
            se_pred,
            ddf,
            lcl: pred - q * se_pred,
            ucl: pred + q * se_pred,
            kind,
            alpha,
        })
    }
}

impl TableRecord for PredictionRow {
    fn header() -> Vec<&'static str> {
        vec!["lot", "month", "kind", "pred", "se_pred", "ddf", "alpha", "lcl", "ucl"]
    }
    fn cells(&self) -> Vec<Cell> {
        vec![
            self.lot.clone().into(),
            self.month.into(),
            self.kind.label().into(),
            self.pred.into(),
            self.se_pred.into(),
            self.ddf.into(),
            self.alpha.into(),
            self.lcl.into(),
            self.ucl.into(),
        ]
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in (0, 0.5], got {alpha}")))
    }
}

/// Coefficient vector `lambda` over `(beta, b)` for a predicted mean.
///
/// Conditional contrasts stack `x(t) = (1, t)` with the lot's intercept
/// indicator and, for random-slope models, `t` on its slope column.
pub fn contrast(design: &Design, lot: Option<usize>, month: f64, kind: PredictionKind) -> Result<DVector<f64>> {
    let mut l = DVector::zeros(2 + design.q());
    l[0] = 1.0;
    l[1] = month;
    if kind == PredictionKind::Conditional {
        let lot = lot.ok_or_else(|| Error::InvalidArgument("conditional prediction needs a lot".into()))?;
        if lot >= design.lots.len() {
            return Err(Error::UnknownLot(format!("#{lot}")));
        }
        if let Some(j) = design.z_column(lot, VarComp::LotIntercept) {
            l[2 + j] = 1.0;
        }
        if let Some(j) = design.z_column(lot, VarComp::LotSlope) {
            l[2 + j] = month;
        }
    }
    Ok(l)
}

/// `lambda' C lambda`.
pub fn contrast_variance(c: &DMatrix<f64>, lambda: &DVector<f64>) -> f64 {
    (lambda.transpose() * c * lambda)[(0, 0)].max(0.0)
}

/// Point prediction and prediction-error variance for a target.
pub fn point_and_variance(fit: &FitResult, lot: Option<usize>, month: f64, kind: PredictionKind) -> Result<(f64, f64)> {
    let l = contrast(&fit.design, lot, month, kind)?;
    let mut pred = fit.beta[0] + fit.beta[1] * month;
    if kind == PredictionKind::Conditional {
        let b = &fit.blups[lot.expect("checked by contrast")];
        pred += b.b0 + b.b1 * month;
    }
    Ok((pred, contrast_variance(&fit.mme_inverse, &l)))
}

/// Predicts a conditional (lot-specific) or marginal mean at `month`.
///
/// `ddf` is supplied by the caller (see the `ddf` module).
pub fn predict(
    fit: &FitResult,
    lot: Option<&str>,
    month: f64,
    kind: PredictionKind,
    alpha: f64,
    ddf: f64,
) -> Result<PredictionRow> {
    check_alpha(alpha)?;
    let idx = match lot {
        Some(name) => Some(fit.lot_index(name)?),
        None => None,
    };
    if kind == PredictionKind::Conditional && idx.is_none() {
        return Err(Error::InvalidArgument("conditional prediction needs a lot".into()));
    }
    let (pred, v) = point_and_variance(fit, idx, month, kind)?;
    let lot_label = match kind {
        PredictionKind::Conditional => lot.map(str::to_string),
        PredictionKind::Marginal => None,
    };
    PredictionRow::from_parts(lot_label, month, kind, pred, v.sqrt(), ddf, alpha)
}
