//! Compliance scoring of confidence-limit bands.
//!
//! A lot fails at month `t` when its band margin `LCL(t) - LSL` is strictly
//! negative; equality is compliant. The first-crossing month is the earliest
//! failing grid month even if the band later recovers.

use serde::{Deserialize, Serialize};

use crate::data::{Cell, TableRecord};
use crate::lmm::PredictionRow;
use crate::{Error, Result};

/// Which limit is scored against which specification limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Side {
    /// `LCL >= LSL`.
    #[default]
    Lower,
    /// `UCL <= USL`, with margin `USL - UCL`.
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginPoint {
    pub month: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotMargins {
    pub lot: String,
    pub margins: Vec<MarginPoint>,
    pub first_crossing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSummary {
    pub method: String,
    pub lots: Vec<LotMargins>,
    pub worst_case_month: Option<f64>,
    /// Smallest limit over lots at `t_star` (largest for the upper side).
    pub limit_at_t_star: f64,
    pub support_at_t_star: bool,
    pub t_star: f64,
    pub spec_limit: f64,
    pub side: Side,
}

/// Signed margin of one prediction against a specification limit.
pub fn margin(row: &PredictionRow, spec_limit: f64, side: Side) -> f64 {
    match side {
        Side::Lower => row.lcl - spec_limit,
        Side::Upper => spec_limit - row.ucl,
    }
}

/// Margin series per lot, in first-appearance order of the lots. Months
/// within a lot must be ascending.
pub fn band_margins(rows: &[PredictionRow], spec_limit: f64, side: Side) -> Result<Vec<LotMargins>> {
    let mut out: Vec<LotMargins> = Vec::new();
    for r in rows {
        let lot = r.lot.clone().unwrap_or_default();
        let m = MarginPoint {
            month: r.month,
            margin: margin(r, spec_limit, side),
        };
        match out.iter_mut().find(|l| l.lot == lot) {
            Some(l) => {
                if l.margins.last().is_some_and(|p| p.month >= r.month) {
                    return Err(Error::InvalidArgument(format!("grid for lot '{lot}' is not ascending")));
                }
                l.margins.push(m);
            }
            None => out.push(LotMargins {
                lot,
                margins: vec![m],
                first_crossing: None,
            }),
        }
    }
    for l in &mut out {
        l.first_crossing = first_crossing(&l.margins);
    }
    Ok(out)
}

/// Earliest month with a strictly negative margin.
pub fn first_crossing(series: &[MarginPoint]) -> Option<f64> {
    series.iter().find(|p| p.margin < 0.0).map(|p| p.month)
}

/// Scores conditional predictions on a grid that contains `t_star`.
pub fn summarize(
    method: &str,
    rows: &[PredictionRow],
    t_star: f64,
    spec_limit: f64,
    side: Side,
) -> Result<DecisionSummary> {
    let lots = band_margins(rows, spec_limit, side)?;
    let at_star: Vec<&PredictionRow> = rows.iter().filter(|r| r.month == t_star).collect();
    if at_star.is_empty() {
        return Err(Error::InvalidArgument(format!("grid does not contain t_star = {t_star}")));
    }
    let limit_at_t_star = match side {
        Side::Lower => at_star.iter().map(|r| r.lcl).fold(f64::INFINITY, f64::min),
        Side::Upper => at_star.iter().map(|r| r.ucl).fold(f64::NEG_INFINITY, f64::max),
    };
    let worst_case_month = lots
        .iter()
        .filter_map(|l| l.first_crossing)
        .fold(None, |acc: Option<f64>, m| Some(acc.map_or(m, |a| a.min(m))));
    Ok(DecisionSummary {
        method: method.to_string(),
        lots,
        worst_case_month,
        limit_at_t_star,
        support_at_t_star: supports(limit_at_t_star, spec_limit, side),
        t_star,
        spec_limit,
        side,
    })
}

fn supports(limit: f64, spec_limit: f64, side: Side) -> bool {
    match side {
        Side::Lower => limit >= spec_limit,
        Side::Upper => limit <= spec_limit,
    }
}

/// True iff every lot's LCL at `t_star` is at or above `lsl`.
pub fn support_at_expiry(rows_at_t_star: &[PredictionRow], lsl: f64) -> bool {
    rows_at_t_star.iter().all(|r| r.lcl >= lsl)
}

/// True iff the LCL does not exceed the true mean.
pub fn coverage_indicator(row: &PredictionRow, true_mu: f64) -> bool {
    row.lcl <= true_mu
}

/// Flat `(lot, month, margin)` rows for CSV output.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginRecord {
    pub method: String,
    pub lot: String,
    pub month: f64,
    pub margin: f64,
}

impl TableRecord for MarginRecord {
    fn header() -> Vec<&'static str> {
        vec!["method", "lot", "month", "margin"]
    }
    fn cells(&self) -> Vec<Cell> {
        vec![
            self.method.as_str().into(),
            self.lot.as_str().into(),
            self.month.into(),
            self.margin.into(),
        ]
    }
}

impl DecisionSummary {
    pub fn margin_records(&self) -> Vec<MarginRecord> {
        self.lots
            .iter()
            .flat_map(|l| {
                l.margins.iter().map(|p| MarginRecord {
                    method: self.method.clone(),
                    lot: l.lot.clone(),
                    month: p.month,
                    margin: p.margin,
                })
            })
            .collect()
    }
}
