//! The six analysis approaches compared for a proposed expiry.
//!
//! | label         | analysis                                                     |
//! |---------------|--------------------------------------------------------------|
//! | `OLS`         | pooled regression, residual DDF                              |
//! | `FIXED`       | fixed-lot ANCOVA with Q1E-style poolability step-down        |
//! | `CONTAIN`     | random intercept and slope, containment DDF                  |
//! | `SAT`         | random intercept and slope, Satterthwaite DDF                |
//! | `SAT_reduced` | 10% variance-contribution reduction, then Satterthwaite      |
//! | `SAT_AICc`    | AICc choice among the three models, then Satterthwaite       |
//!
//! Each maps a dataset to conditional-mean limits on a month grid and a
//! [`DecisionSummary`] at the proposed expiry.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::StabilityDataset;
use crate::ddf::{containment_ddf, residual_ddf, DdfMethod, SattEvaluator, Target};
use crate::decision::{summarize, DecisionSummary, Side};
use crate::lmm::{
    build_design, fit_reml, point_and_variance, FitResult, ModelSpec, PredictionKind, PredictionRow, VarComp,
};
use crate::num::{f_sf, t_quantile};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Ols,
    Fixed,
    Contain,
    Sat,
    SatReduced,
    SatAicc,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ols,
        Method::Fixed,
        Method::Contain,
        Method::Sat,
        Method::SatReduced,
        Method::SatAicc,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Ols => "OLS",
            Method::Fixed => "FIXED",
            Method::Contain => "CONTAIN",
            Method::Sat => "SAT",
            Method::SatReduced => "SAT_reduced",
            Method::SatAicc => "SAT_AICc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .find(|m| m.label().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown method '{s}' (OLS|FIXED|CONTAIN|SAT|SAT_reduced|SAT_AICc)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowConfig {
    pub t_star: f64,
    /// One-sided level of the confidence limits.
    pub alpha: f64,
    /// Evaluation months; defaults to the scheduled pulls plus `t_star`.
    pub grid: Option<Vec<f64>>,
    /// Variance-contribution cutoff of the reduction rule.
    pub reduction_threshold: f64,
    /// Significance level at or above which lots are pooled.
    pub pooling_p: f64,
    pub side: Side,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            t_star: 48.0,
            alpha: 0.05,
            grid: None,
            reduction_threshold: 0.10,
            pooling_p: 0.25,
            side: Side::Lower,
        }
    }
}

/// Pooling outcome of the fixed-lot analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixedLotModel {
    /// Lot-specific intercepts and slopes.
    SeparateSlopes,
    /// Lot-specific intercepts, common slope.
    CommonSlope,
    /// One regression line for all lots.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinalModel {
    Mixed(ModelSpec),
    FixedLot(FixedLotModel),
}

impl fmt::Display for FinalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FinalModel::Mixed(s) => write!(f, "{s}"),
            FinalModel::FixedLot(FixedLotModel::SeparateSlopes) => f.write_str("fixed:separate_slopes"),
            FinalModel::FixedLot(FixedLotModel::CommonSlope) => f.write_str("fixed:common_slope"),
            FinalModel::FixedLot(FixedLotModel::Pooled) => f.write_str("fixed:pooled"),
        }
    }
}

/// A model-simplification rule that fired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub rule: String,
    pub statistic: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowResult {
    pub method: Method,
    pub final_model: FinalModel,
    pub reduction_trace: Vec<TraceStep>,
    pub predictions: Vec<PredictionRow>,
    pub decision: DecisionSummary,
}

impl WorkflowResult {
    /// Conditional rows at `month`, one per lot.
    pub fn rows_at(&self, month: f64) -> impl Iterator<Item = &PredictionRow> {
        self.predictions.iter().filter(move |r| r.month == month)
    }
}

/// `-2 l_R + 2d + 2d(d+1)/(n* - d - 1)` with `d` covariance parameters and
/// `n* = n - p`.
pub fn aicc_value(fit: &FitResult) -> Result<f64> {
    let d = fit.spec.n_cov_params() as f64;
    let nstar = (fit.n - fit.p) as f64;
    if nstar <= d + 1.0 {
        return Err(Error::InvalidArgument(format!(
            "AICc needs n - p > d + 1 (n - p = {nstar}, d = {d})"
        )));
    }
    Ok(-2.0 * fit.reml_loglik + 2.0 * d + 2.0 * d * (d + 1.0) / (nstar - d - 1.0))
}

/// Outcome of the variance-contribution reduction rule.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub spec: ModelSpec,
    pub trace: Vec<TraceStep>,
    /// Fit of the final model (`fit` itself if nothing fired).
    pub fit: FitResult,
}

/// Drops the random slope when its contribution to the variance at `t_star`
/// is below `threshold`, then drops the random intercept of the refitted
/// random-intercept model when `vcfrac` is below `threshold`.
pub fn reduce_random_structure(fit: &FitResult, t_star: f64, threshold: f64) -> Result<Reduction> {
    let mut trace = Vec::new();
    if fit.spec != ModelSpec::Ris {
        return Err(Error::InvalidArgument("reduction starts from the random-slope model".into()));
    }
    let (_, p_b1) = fit.theta.contributions_at(t_star);
    if p_b1 >= threshold {
        return Ok(Reduction {
            spec: ModelSpec::Ris,
            trace,
            fit: fit.clone(),
        });
    }
    trace.push(TraceStep {
        rule: "drop_random_slope".into(),
        statistic: p_b1,
        threshold,
    });
    let ri = fit_reml(&fit.design.respec(ModelSpec::Ri), &fit.y)?;
    let p_b0 = ri.theta.vcfrac();
    if p_b0 >= threshold {
        return Ok(Reduction {
            spec: ModelSpec::Ri,
            trace,
            fit: ri,
        });
    }
    trace.push(TraceStep {
        rule: "drop_random_intercept".into(),
        statistic: p_b0,
        threshold,
    });
    let ols = fit_reml(&fit.design.respec(ModelSpec::Ols), &fit.y)?;
    Ok(Reduction {
        spec: ModelSpec::Ols,
        trace,
        fit: ols,
    })
}

/// Runs the workflows on one dataset, sharing fits between them.
pub struct Analyzer<'a> {
    ds: &'a StabilityDataset,
    cfg: &'a WorkflowConfig,
    y: Vec<f64>,
    grid: Vec<f64>,
    fits: [Option<FitResult>; 3],
}

fn slot(spec: ModelSpec) -> usize {
    match spec {
        ModelSpec::Ris => 0,
        ModelSpec::Ri => 1,
        ModelSpec::Ols => 2,
    }
}

impl<'a> Analyzer<'a> {
    pub fn new(ds: &'a StabilityDataset, cfg: &'a WorkflowConfig) -> Self {
        let mut grid = cfg.grid.clone().unwrap_or_else(|| ds.months());
        if !grid.contains(&cfg.t_star) {
            grid.push(cfg.t_star);
        }
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        Self {
            ds,
            cfg,
            y: ds.values(),
            grid,
            fits: [None, None, None],
        }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// The bounded-REML fit of `spec`, computed on first use.
    pub fn fit(&mut self, spec: ModelSpec) -> Result<&FitResult> {
        let i = slot(spec);
        if self.fits[i].is_none() {
            self.fits[i] = Some(fit_reml(&build_design(self.ds, spec), &self.y)?);
        }
        Ok(self.fits[i].as_ref().expect("just fitted"))
    }

    pub fn run(&mut self, method: Method) -> Result<WorkflowResult> {
        match method {
            Method::Ols => self.ols(),
            Method::Fixed => self.fixed(),
            Method::Contain => self.mixed(method, ModelSpec::Ris, DdfMethod::Contain),
            Method::Sat => self.mixed(method, ModelSpec::Ris, DdfMethod::Sat),
            Method::SatReduced => self.sat_reduced(),
            Method::SatAicc => self.sat_aicc(),
        }
    }

    fn finish(&self, method: Method, final_model: FinalModel, trace: Vec<TraceStep>, rows: Vec<PredictionRow>) -> Result<WorkflowResult> {
        let lsl = self.ds.lsl;
        let decision = summarize(method.label(), &rows, self.cfg.t_star, lsl, self.cfg.side)?;
        Ok(WorkflowResult {
            method,
            final_model,
            reduction_trace: trace,
            predictions: rows,
            decision,
        })
    }

    /// Mixed-model analysis of `spec` with the given DDF rule.
    pub fn mixed(&mut self, method: Method, spec: ModelSpec, ddf: DdfMethod) -> Result<WorkflowResult> {
        self.fit(spec)?;
        let fit = self.fits[slot(spec)].as_ref().expect("fitted");
        let rows = conditional_rows(fit, ddf, &self.grid, self.cfg.alpha)?;
        self.finish(method, FinalModel::Mixed(spec), Vec::new(), rows)
    }

    fn ols(&mut self) -> Result<WorkflowResult> {
        self.fit(ModelSpec::Ols)?;
        let fit = self.fits[slot(ModelSpec::Ols)].as_ref().expect("fitted");
        let rows = conditional_rows(fit, DdfMethod::Residual, &self.grid, self.cfg.alpha)?;
        self.finish(Method::Ols, FinalModel::Mixed(ModelSpec::Ols), Vec::new(), rows)
    }

    fn sat_reduced(&mut self) -> Result<WorkflowResult> {
        let ris = self.fit(ModelSpec::Ris)?.clone();
        let red = reduce_random_structure(&ris, self.cfg.t_star, self.cfg.reduction_threshold)?;
        let ddf = if red.spec == ModelSpec::Ols {
            DdfMethod::Residual
        } else {
            DdfMethod::Sat
        };
        let rows = conditional_rows(&red.fit, ddf, &self.grid, self.cfg.alpha)?;
        let i = slot(red.spec);
        if self.fits[i].is_none() {
            self.fits[i] = Some(red.fit);
        }
        self.finish(Method::SatReduced, FinalModel::Mixed(red.spec), red.trace, rows)
    }

    /// The model with the smallest AICc, ties going to fewer parameters.
    pub fn aicc_choice(&mut self) -> Result<(ModelSpec, Vec<(ModelSpec, f64)>)> {
        let mut scores = Vec::with_capacity(3);
        for spec in [ModelSpec::Ols, ModelSpec::Ri, ModelSpec::Ris] {
            scores.push((spec, aicc_value(self.fit(spec)?)?));
        }
        // ordered by increasing d, so a strict comparison keeps the simpler one
        let mut best = scores[0];
        for &s in &scores[1..] {
            if s.1 < best.1 {
                best = s;
            }
        }
        Ok((best.0, scores))
    }

    fn sat_aicc(&mut self) -> Result<WorkflowResult> {
        let (spec, scores) = self.aicc_choice()?;
        let ris = scores.iter().find(|s| s.0 == ModelSpec::Ris).expect("scored").1;
        let mut trace = Vec::new();
        if spec != ModelSpec::Ris {
            trace.push(TraceStep {
                rule: format!("aicc_select_{}", spec.label()),
                statistic: scores.iter().find(|s| s.0 == spec).expect("scored").1,
                threshold: ris,
            });
        }
        let ddf = if spec == ModelSpec::Ols {
            DdfMethod::Residual
        } else {
            DdfMethod::Sat
        };
        let fit = self.fits[slot(spec)].as_ref().expect("fitted");
        let rows = conditional_rows(fit, ddf, &self.grid, self.cfg.alpha)?;
        self.finish(Method::SatAicc, FinalModel::Mixed(spec), trace, rows)
    }

    fn fixed(&mut self) -> Result<WorkflowResult> {
        let q = fixed_lot_analysis(self.ds, self.cfg.pooling_p)?;
        let lots = self.ds.lots();
        let mut rows = Vec::with_capacity(lots.len() * self.grid.len());
        let tq = t_quantile(1.0 - self.cfg.alpha, q.df as f64)?;
        for (l, lot) in lots.iter().enumerate() {
            for &m in &self.grid {
                let x = q.row(l, m, lots.len());
                let pred = x.dot(&q.coef);
                let se = (q.s2 * (x.transpose() * &q.xtx_inv * &x)[(0, 0)]).max(0.0).sqrt();
                rows.push(PredictionRow {
                    lot: Some(lot.clone()),
                    month: m,
                    pred,
                    se_pred: se,
                    ddf: q.df as f64,
                    lcl: pred - tq * se,
                    ucl: pred + tq * se,
                    kind: PredictionKind::Conditional,
                    alpha: self.cfg.alpha,
                });
            }
        }
        self.finish(Method::Fixed, FinalModel::FixedLot(q.model), q.trace, rows)
    }
}

/// Conditional predictions for every lot of `fit` on `grid`.
pub fn conditional_rows(fit: &FitResult, ddf: DdfMethod, grid: &[f64], alpha: f64) -> Result<Vec<PredictionRow>> {
    let nl = fit.lots().len();
    let constant = match ddf {
        DdfMethod::Contain if fit.spec != ModelSpec::Ols => Some(containment_ddf(&fit.design)? as f64),
        DdfMethod::Contain | DdfMethod::Residual => Some(residual_ddf(&fit.design)? as f64),
        DdfMethod::Sat => None,
    };
    let satt = match constant {
        None => Some(SattEvaluator::new(fit)?),
        Some(_) => None,
    };
    let mut rows = Vec::with_capacity(nl * grid.len());
    for l in 0..nl {
        for &m in grid {
            let (pred, v) = point_and_variance(fit, Some(l), m, PredictionKind::Conditional)?;
            let nu = match (&constant, &satt) {
                (Some(c), _) => *c,
                (None, Some(e)) => e.report(&Target::conditional(l, m))?.nu,
                _ => unreachable!(),
            };
            rows.push(PredictionRow::from_parts(
                Some(fit.lots()[l].clone()),
                m,
                PredictionKind::Conditional,
                pred,
                v.sqrt(),
                nu,
                alpha,
            )?);
        }
    }
    Ok(rows)
}

/// Final fixed-lot regression after the poolability tests.
#[derive(Debug, Clone)]
pub struct FixedLotFit {
    pub model: FixedLotModel,
    pub coef: DVector<f64>,
    pub xtx_inv: DMatrix<f64>,
    /// Residual mean square.
    pub s2: f64,
    pub df: usize,
    /// p-values of the slope and (if reached) intercept poolability tests.
    pub p_slopes: f64,
    pub p_intercepts: Option<f64>,
    pub trace: Vec<TraceStep>,
}

impl FixedLotFit {
    fn row(&self, lot: usize, month: f64, n_lots: usize) -> DVector<f64> {
        design_row(self.model, lot, month, n_lots)
    }
}

fn design_row(model: FixedLotModel, lot: usize, month: f64, n_lots: usize) -> DVector<f64> {
    match model {
        FixedLotModel::Pooled => DVector::from_column_slice(&[1.0, month]),
        FixedLotModel::CommonSlope => {
            let mut x = DVector::zeros(n_lots + 1);
            x[lot] = 1.0;
            x[n_lots] = month;
            x
        }
        FixedLotModel::SeparateSlopes => {
            let mut x = DVector::zeros(2 * n_lots);
            x[lot] = 1.0;
            x[n_lots + lot] = month;
            x
        }
    }
}

struct Ls {
    coef: DVector<f64>,
    xtx_inv: DMatrix<f64>,
    rss: f64,
    df: usize,
}

fn least_squares(ds: &StabilityDataset, model: FixedLotModel) -> Result<Ls> {
    let lots = ds.lots();
    let nl = lots.len();
    let rows = ds.rows();
    let p = design_row(model, 0, 0.0, nl).len();
    let mut x = DMatrix::zeros(rows.len(), p);
    for (i, r) in rows.iter().enumerate() {
        let l = lots.binary_search(&r.lot).expect("lot present");
        x.row_mut(i).copy_from(&design_row(model, l, r.month, nl).transpose());
    }
    let y = DVector::from_column_slice(&ds.values());
    let xtx = x.transpose() * &x;
    let xtx_inv = xtx.cholesky().map(|c| c.inverse()).ok_or_else(|| {
        Error::Dataset("fixed-lot regression is rank deficient (a lot needs two distinct months)".into())
    })?;
    let coef = &xtx_inv * x.transpose() * &y;
    let resid = &y - &x * &coef;
    if rows.len() <= p {
        return Err(Error::Dataset("no residual degrees of freedom in fixed-lot regression".into()));
    }
    Ok(Ls {
        coef,
        xtx_inv,
        rss: resid.norm_squared(),
        df: rows.len() - p,
    })
}

/// Fixed-lot ANCOVA with sequential extra-sum-of-squares poolability tests:
/// lot-by-month interaction first, then lot intercepts; each is pooled when
/// its p-value is at least `pooling_p`.
pub fn fixed_lot_analysis(ds: &StabilityDataset, pooling_p: f64) -> Result<FixedLotFit> {
    let nl = ds.n_lots() as f64;
    let full = least_squares(ds, FixedLotModel::SeparateSlopes)?;
    let common = least_squares(ds, FixedLotModel::CommonSlope)?;
    let f_slopes = ((common.rss - full.rss).max(0.0) / (nl - 1.0)) / (full.rss / full.df as f64);
    let p_slopes = f_sf(f_slopes, nl - 1.0, full.df as f64);
    let done = |ls: Ls, model, p_intercepts, trace| FixedLotFit {
        model,
        s2: ls.rss / ls.df as f64,
        df: ls.df,
        coef: ls.coef,
        xtx_inv: ls.xtx_inv,
        p_slopes,
        p_intercepts,
        trace,
    };
    if p_slopes < pooling_p {
        return Ok(done(full, FixedLotModel::SeparateSlopes, None, Vec::new()));
    }
    let mut trace = vec![TraceStep {
        rule: "pool_slopes".into(),
        statistic: p_slopes,
        threshold: pooling_p,
    }];
    let pooled = least_squares(ds, FixedLotModel::Pooled)?;
    let f_int = ((pooled.rss - common.rss).max(0.0) / (nl - 1.0)) / (common.rss / common.df as f64);
    let p_int = f_sf(f_int, nl - 1.0, common.df as f64);
    if p_int < pooling_p {
        return Ok(done(common, FixedLotModel::CommonSlope, Some(p_int), trace));
    }
    trace.push(TraceStep {
        rule: "pool_intercepts".into(),
        statistic: p_int,
        threshold: pooling_p,
    });
    Ok(done(pooled, FixedLotModel::Pooled, Some(p_int), trace))
}

pub fn analyze(ds: &StabilityDataset, method: Method, cfg: &WorkflowConfig) -> Result<WorkflowResult> {
    Analyzer::new(ds, cfg).run(method)
}

/// Random intercept-and-slope (or another `spec`) analysis with containment
/// or Satterthwaite DDF.
pub fn analyze_mixed(ds: &StabilityDataset, ddf: DdfMethod, spec: ModelSpec, cfg: &WorkflowConfig) -> Result<WorkflowResult> {
    let method = match ddf {
        DdfMethod::Contain => Method::Contain,
        DdfMethod::Sat => Method::Sat,
        DdfMethod::Residual => Method::Ols,
    };
    Analyzer::new(ds, cfg).mixed(method, spec, ddf)
}

pub fn analyze_ols(ds: &StabilityDataset, cfg: &WorkflowConfig) -> Result<WorkflowResult> {
    analyze(ds, Method::Ols, cfg)
}

pub fn analyze_fixed_q1e(ds: &StabilityDataset, cfg: &WorkflowConfig) -> Result<WorkflowResult> {
    analyze(ds, Method::Fixed, cfg)
}

pub fn analyze_sat_reduced(ds: &StabilityDataset, cfg: &WorkflowConfig) -> Result<WorkflowResult> {
    analyze(ds, Method::SatReduced, cfg)
}

pub fn analyze_sat_aicc(ds: &StabilityDataset, cfg: &WorkflowConfig) -> Result<WorkflowResult> {
    analyze(ds, Method::SatAicc, cfg)
}

/// Whether a fit's random structure is entirely on the boundary.
pub fn fully_reverted(fit: &FitResult) -> bool {
    fit.spec
        .random_components()
        .iter()
        .all(|c| *c == VarComp::Residual || fit.is_boundary(*c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmm::{fit_with_theta, Theta};

    fn fit_at(theta: Theta) -> FitResult {
        let mut rows = Vec::new();
        for l in 0..4 {
            for m in [0.0, 6.0, 12.0, 24.0] {
                rows.push(crate::data::Observation {
                    lot: format!("L{l}"),
                    month: m,
                    value: 100.0 - 0.1 * m + 0.01 * ((l * 3 + m as usize) % 5) as f64,
                });
            }
        }
        let ds = StabilityDataset::new(rows, "a", 90.0).unwrap();
        let d = build_design(&ds, ModelSpec::Ris);
        fit_with_theta(&d, &ds.values(), theta, None).unwrap()
    }

    #[test]
    fn method_labels_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
        }
        assert!("KR".parse::<Method>().is_err());
    }

    #[test]
    fn reduction_keeps_large_slope_contribution() {
        let r = reduce_random_structure(&fit_at(Theta::new(0.3, 0.0002, 0.7)), 48.0, 0.1).unwrap();
        let (_, p) = Theta::new(0.3, 0.0002, 0.7).contributions_at(48.0);
        assert!((p - 0.4608 / 1.4608).abs() < 1e-12);
        assert_eq!(r.spec, ModelSpec::Ris);
        assert!(r.trace.is_empty());
    }

    #[test]
    fn reduction_fires_on_zero_slope() {
        let r = reduce_random_structure(&fit_at(Theta::new(0.02, 0.0, 0.98)), 48.0, 0.1).unwrap();
        assert_eq!(r.trace[0].rule, "drop_random_slope");
        assert_eq!(r.trace[0].statistic, 0.0);
        assert_ne!(r.spec, ModelSpec::Ris);
    }

    #[test]
    fn aicc_penalty_orders_equal_likelihoods() {
        let mut a = fit_at(Theta::new(0.1, 0.0, 0.9));
        a.n = 70;
        a.reml_loglik = -100.0;
        let mut b = a.clone();
        b.spec = ModelSpec::Ri;
        assert!(aicc_value(&b).unwrap() < aicc_value(&a).unwrap());
        let mut o = a.clone();
        o.spec = ModelSpec::Ols;
        assert!((aicc_value(&o).unwrap() - (200.0 + 2.0 + 4.0 / 66.0)).abs() < 1e-12);
    }
}
