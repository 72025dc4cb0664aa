//! Monte Carlo laboratory for the operating characteristics of the
//! workflows.
//!
//! Datasets follow the random-intercept model
//! `Y_ij = beta0 + beta1 t_j + b_i + e_ij` with `b_i ~ N(0, vcfrac s2)`,
//! `e_ij ~ N(0, (1 - vcfrac) s2)` on a balanced schedule, and no random
//! slope. Every replicate draws from its own stream keyed by
//! `(seed, diagnostic and vcfrac, replicate)`, so results do not depend on
//! thread count or scheduling.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{write_table, Cell, Observation, StabilityDataset, TableRecord};
use crate::ddf::DdfMethod;
use crate::lmm::{build_design, fit_reml, FitResult, ModelSpec, PredictionRow, VarComp};
use crate::num::{normal_cdf, normal_quantile, rng_normal, RngStream};
use crate::workflows::{aicc_value, conditional_rows, Analyzer, Method, WorkflowConfig};
use crate::{Error, Result};

fn default_months() -> Vec<f64> {
    vec![0.0, 3.0, 6.0, 9.0, 12.0, 24.0, 36.0]
}

fn default_grid() -> Vec<f64> {
    (0..10).map(|k| k as f64 / 10.0).collect()
}

/// Simulation settings. Every field has a default, so an empty JSON object
/// is the baseline study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub lots: usize,
    pub months: Vec<f64>,
    pub beta0: f64,
    /// Month at which the population mean reaches `lsl`; sets the slope.
    pub crossing_month: f64,
    /// Crossing month of the sensitivity calibration.
    pub sensitivity_crossing_month: f64,
    pub lsl: f64,
    pub sigma_tot2: f64,
    pub vcfrac_grid: Vec<f64>,
    pub reps_margin: usize,
    pub reps_boundary: usize,
    pub reps_coverage: usize,
    pub reps_decision: usize,
    pub t_star: f64,
    pub alpha: f64,
    pub seed: u64,
    /// Equal-width bins of fitted vcfrac on `[0, 1)`, plus an exact-zero bin.
    pub vcfrac_bins: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            lots: 10,
            months: default_months(),
            beta0: 100.0,
            crossing_month: 57.0,
            sensitivity_crossing_month: 52.0,
            lsl: 90.0,
            sigma_tot2: 1.0,
            vcfrac_grid: default_grid(),
            reps_margin: 200,
            reps_boundary: 500,
            reps_coverage: 1500,
            reps_decision: 2000,
            t_star: 48.0,
            alpha: 0.05,
            seed: 20250101,
            vcfrac_bins: 20,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.lots < 2 {
            return bad("lots must be at least 2");
        }
        if self.months.len() < 3 || self.months.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return bad("months need at least 3 finite nonnegative values");
        }
        if !(self.sigma_tot2 > 0.0) {
            return bad("sigma_tot2 must be positive");
        }
        if self.vcfrac_grid.iter().any(|v| !(0.0..1.0).contains(v)) {
            return bad("vcfrac_grid values must lie in [0, 1)");
        }
        if !(self.crossing_month > 0.0) || !(self.sensitivity_crossing_month > 0.0) {
            return bad("crossing months must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return bad("alpha must lie in (0, 0.5]");
        }
        if self.vcfrac_bins == 0 {
            return bad("vcfrac_bins must be positive");
        }
        Ok(())
    }

    /// Slope that puts the population mean at `lsl` at `crossing_month`.
    pub fn beta1(&self, crossing_month: f64) -> f64 {
        (self.lsl - self.beta0) / crossing_month
    }

    pub fn workflow_config(&self) -> WorkflowConfig {
        WorkflowConfig {
            t_star: self.t_star,
            alpha: self.alpha,
            ..WorkflowConfig::default()
        }
    }
}

/// A simulated dataset together with its true lot effects.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub dataset: StabilityDataset,
    /// `b_i` in lot order.
    pub lot_effects: Vec<f64>,
    pub beta0: f64,
    pub beta1: f64,
}

impl SimDataset {
    /// True conditional mean of lot `i` at month `t`.
    pub fn true_mean(&self, lot: usize, t: f64) -> f64 {
        self.beta0 + self.beta1 * t + self.lot_effects[lot]
    }
}

pub fn simulate_dataset(cfg: &SimConfig, vcfrac: f64, crossing_month: f64, stream: RngStream) -> Result<SimDataset> {
    let l = cfg.lots;
    let m = cfg.months.len();
    let z = rng_normal(stream, l * (m + 1));
    let sb = (vcfrac * cfg.sigma_tot2).sqrt();
    let se = ((1.0 - vcfrac) * cfg.sigma_tot2).sqrt();
    let beta1 = cfg.beta1(crossing_month);
    let width = (l - 1).to_string().len();
    let mut rows = Vec::with_capacity(l * m);
    let mut effects = Vec::with_capacity(l);
    for i in 0..l {
        let b = sb * z[i];
        effects.push(b);
        for (j, &t) in cfg.months.iter().enumerate() {
            rows.push(Observation {
                lot: format!("L{i:0width$}"),
                month: t,
                value: cfg.beta0 + beta1 * t + b + se * z[l + i * m + j],
            });
        }
    }
    Ok(SimDataset {
        dataset: StabilityDataset::new(rows, "simulated", cfg.lsl)?,
        lot_effects: effects,
        beta0: cfg.beta0,
        beta1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Diagnostic {
    MarginDdf = 1,
    Boundary = 2,
    Coverage = 3,
    Decision = 4,
    Sensitivity = 5,
}

fn stream(cfg: &SimConfig, diag: Diagnostic, vcfrac: f64, rep: usize) -> RngStream {
    let setting = (diag as u64) * 10_000_000 + (vcfrac * 1e6).round() as u64;
    RngStream::new(cfg.seed, setting, rep as u64)
}

fn replicate<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

// ---------------------------------------------------------------- margins

/// Methods summarized in the margin and DDF curves. All start from the
/// random-intercept fit.
pub const MARGIN_METHODS: [Method; 5] = [Method::Ols, Method::Contain, Method::Sat, Method::SatReduced, Method::SatAicc];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveIndex {
    /// Indexed by the generating vcfrac.
    True,
    /// Indexed by bins of the fitted vcfrac.
    Fitted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub index: CurveIndex,
    /// Generating vcfrac, or the bin midpoint (0 for the exact-zero bin).
    pub x: f64,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub method: String,
    pub mean_margin: f64,
    pub mean_ddf: f64,
    pub n_datasets: usize,
    pub failures: usize,
}

/// Margin curve rows (`fig4_margin.csv`).
pub struct MarginTable<'a>(pub &'a [CurveRow]);
/// DDF curve rows (`fig5_ddf.csv`).
pub struct DdfTable<'a>(pub &'a [CurveRow]);

fn curve_cells(r: &CurveRow, value: f64) -> Vec<Cell> {
    vec![
        match r.index {
            CurveIndex::True => "true",
            CurveIndex::Fitted => "fitted",
        }
        .into(),
        r.x.into(),
        r.bin_lo.into(),
        r.bin_hi.into(),
        r.method.as_str().into(),
        value.into(),
        r.n_datasets.into(),
        r.failures.into(),
    ]
}

struct MarginRecord<'a>(&'a CurveRow);
struct DdfRecord<'a>(&'a CurveRow);

impl TableRecord for MarginRecord<'_> {
    fn header() -> Vec<&'static str> {
        vec!["index", "x", "bin_lo", "bin_hi", "method", "mean_margin", "n_datasets", "failures"]
    }
    fn cells(&self) -> Vec<Cell> {
        curve_cells(self.0, self.0.mean_margin)
    }
}

impl TableRecord for DdfRecord<'_> {
    fn header() -> Vec<&'static str> {
        vec!["index", "x", "bin_lo", "bin_hi", "method", "mean_ddf", "n_datasets", "failures"]
    }
    fn cells(&self) -> Vec<Cell> {
        curve_cells(self.0, self.0.mean_ddf)
    }
}

struct MarginRep {
    vcfrac_hat: Option<f64>,
    /// `(mean margin, mean ddf)` per method; `None` on failure.
    values: Vec<Option<(f64, f64)>>,
}

fn mean_width_and_ddf(rows: &[PredictionRow]) -> (f64, f64) {
    let n = rows.len() as f64;
    let w = rows.iter().map(|r| r.pred - r.lcl).sum::<f64>() / n;
    let d = rows.iter().map(|r| r.ddf).sum::<f64>() / n;
    (w, d)
}

fn margin_rep(cfg: &SimConfig, vcfrac: f64, rep: usize) -> MarginRep {
    let fail = || MarginRep {
        vcfrac_hat: None,
        values: vec![None; MARGIN_METHODS.len()],
    };
    let sim = match simulate_dataset(cfg, vcfrac, cfg.crossing_month, stream(cfg, Diagnostic::MarginDdf, vcfrac, rep)) {
        Ok(s) => s,
        Err(_) => return fail(),
    };
    let ds = &sim.dataset;
    let y = ds.values();
    let ri = fit_reml(&build_design(ds, ModelSpec::Ri), &y);
    let ols = fit_reml(&build_design(ds, ModelSpec::Ols), &y);
    let (ri, ols) = match (ri, ols) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return fail(),
    };
    let grid = &cfg.months;
    let rows = |fit: &FitResult, ddf: DdfMethod| conditional_rows(fit, ddf, grid, cfg.alpha).ok().map(|r| mean_width_and_ddf(&r));
    let vc_hat = ri.theta.vcfrac();
    let values = MARGIN_METHODS
        .iter()
        .map(|m| match m {
            Method::Ols => rows(&ols, DdfMethod::Residual),
            Method::Contain => rows(&ri, DdfMethod::Contain),
            Method::Sat => rows(&ri, DdfMethod::Sat),
            Method::SatReduced => {
                if vc_hat < 0.10 {
                    rows(&ols, DdfMethod::Residual)
                } else {
                    rows(&ri, DdfMethod::Sat)
                }
            }
            Method::SatAicc => match (aicc_value(&ols), aicc_value(&ri)) {
                (Ok(a_ols), Ok(a_ri)) if a_ri < a_ols => rows(&ri, DdfMethod::Sat),
                (Ok(_), Ok(_)) => rows(&ols, DdfMethod::Residual),
                _ => None,
            },
            Method::Fixed => None,
        })
        .collect();
    MarginRep {
        vcfrac_hat: Some(vc_hat),
        values,
    }
}

fn bin_of(v: f64, bins: usize) -> usize {
    // 0 is the exact-zero bin; k >= 1 covers [(k-1)/bins, k/bins)
    if v == 0.0 {
        0
    } else {
        1 + ((v * bins as f64).floor() as usize).min(bins - 1)
    }
}

/// Mean LCL margin (`t(1-alpha, nu) * se`) and mean DDF of random-intercept
/// analyses, averaged over lots and scheduled months per dataset, indexed by
/// the generating vcfrac and by bins of the fitted vcfrac.
pub fn run_margin_df_grid(cfg: &SimConfig) -> Result<Vec<CurveRow>> {
    cfg.validate()?;
    let nm = MARGIN_METHODS.len();
    let nb = cfg.vcfrac_bins;
    let mut out = Vec::new();
    // per fitted bin and method: (sum margin, sum ddf, count)
    let mut fitted = vec![vec![(0.0, 0.0, 0usize); nm]; nb + 1];
    let mut fitted_fail = vec![0usize; nm];
    for &vc in &cfg.vcfrac_grid {
        let reps = replicate(cfg.reps_margin, |r| margin_rep(cfg, vc, r));
        for (k, m) in MARGIN_METHODS.iter().enumerate() {
            let ok: Vec<(f64, f64)> = reps.iter().filter_map(|r| r.values[k]).collect();
            let n = ok.len();
            out.push(CurveRow {
                index: CurveIndex::True,
                x: vc,
                bin_lo: vc,
                bin_hi: vc,
                method: m.label().into(),
                mean_margin: ok.iter().map(|v| v.0).sum::<f64>() / n as f64,
                mean_ddf: ok.iter().map(|v| v.1).sum::<f64>() / n as f64,
                n_datasets: n,
                failures: reps.len() - n,
            });
        }
        for r in &reps {
            for k in 0..nm {
                match (r.vcfrac_hat, r.values[k]) {
                    (Some(v), Some((w, d))) => {
                        let cell = &mut fitted[bin_of(v, nb)][k];
                        cell.0 += w;
                        cell.1 += d;
                        cell.2 += 1;
                    }
                    _ => fitted_fail[k] += 1,
                }
            }
        }
    }
    for (b, cells) in fitted.iter().enumerate() {
        let (lo, hi) = if b == 0 {
            (0.0, 0.0)
        } else {
            ((b - 1) as f64 / nb as f64, b as f64 / nb as f64)
        };
        for (k, m) in MARGIN_METHODS.iter().enumerate() {
            let (sw, sd, n) = cells[k];
            if n == 0 {
                continue;
            }
            out.push(CurveRow {
                index: CurveIndex::Fitted,
                x: 0.5 * (lo + hi),
                bin_lo: lo,
                bin_hi: hi,
                method: m.label().into(),
                mean_margin: sw / n as f64,
                mean_ddf: sd / n as f64,
                n_datasets: n,
                failures: if b == 0 { fitted_fail[k] } else { 0 },
            });
        }
    }
    Ok(out)
}

// --------------------------------------------------------------- boundary

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRow {
    pub vcfrac_true: f64,
    pub reps: usize,
    pub failures: usize,
    pub p_b0_zero: f64,
    pub p_b1_zero: f64,
    /// Mean fitted intercept contribution to the variance at `t_star`.
    pub mean_p_b0: f64,
    /// Mean fitted slope contribution to the variance at `t_star`.
    pub mean_p_b1: f64,
}

impl TableRecord for BoundaryRow {
    fn header() -> Vec<&'static str> {
        vec!["vcfrac_true", "reps", "failures", "p_b0_zero", "p_b1_zero", "mean_p_b0", "mean_p_b1"]
    }
    fn cells(&self) -> Vec<Cell> {
        vec![
            self.vcfrac_true.into(),
            self.reps.into(),
            self.failures.into(),
            self.p_b0_zero.into(),
            self.p_b1_zero.into(),
            self.mean_p_b0.into(),
            self.mean_p_b1.into(),
        ]
    }
}

/// Boundary frequencies and mean variance contributions at `t_star` under
/// the random intercept-and-slope fit.
pub fn summarize_boundary_frequencies(cfg: &SimConfig) -> Result<Vec<BoundaryRow>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &vc in &cfg.vcfrac_grid {
        let reps = replicate(cfg.reps_boundary, |r| {
            let sim = simulate_dataset(cfg, vc, cfg.crossing_month, stream(cfg, Diagnostic::Boundary, vc, r)).ok()?;
            let fit = fit_reml(&build_design(&sim.dataset, ModelSpec::Ris), &sim.dataset.values()).ok()?;
            let (p0, p1) = fit.theta.contributions_at(cfg.t_star);
            Some((fit.is_boundary(VarComp::LotIntercept), fit.is_boundary(VarComp::LotSlope), p0, p1))
        });
        let ok: Vec<_> = reps.iter().flatten().collect();
        let n = ok.len() as f64;
        out.push(BoundaryRow {
            vcfrac_true: vc,
            reps: ok.len(),
            failures: reps.len() - ok.len(),
            p_b0_zero: ok.iter().filter(|r| r.0).count() as f64 / n,
            p_b1_zero: ok.iter().filter(|r| r.1).count() as f64 / n,
            mean_p_b0: ok.iter().map(|r| r.2).sum::<f64>() / n,
            mean_p_b1: ok.iter().map(|r| r.3).sum::<f64>() / n,
        });
    }
    Ok(out)
}

// --------------------------------------------------------------- coverage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub vcfrac_true: f64,
    pub method: String,
    /// Share of lot-dataset pairs whose LCL at `t_star` is at or below the
    /// true conditional mean.
    pub coverage: f64,
    pub lots_scored: usize,
    pub reps: usize,
    pub failures: usize,
}

impl TableRecord for CoverageRow {
    fn header() -> Vec<&'static str> {
        vec!["vcfrac_true", "method", "coverage", "lots_scored", "reps", "failures"]
    }
    fn cells(&self) -> Vec<Cell> {
        vec![
            self.vcfrac_true.into(),
            self.method.as_str().into(),
            self.coverage.into(),
            self.lots_scored.into(),
            self.reps.into(),
            self.failures.into(),
        ]
    }
}

/// Per method: `Some((covered, scored))` or `None` on failure.
fn coverage_rep(cfg: &SimConfig, wcfg: &WorkflowConfig, vc: f64, rep: usize) -> Vec<Option<(usize, usize)>> {
    let sim = match simulate_dataset(cfg, vc, cfg.crossing_month, stream(cfg, Diagnostic::Coverage, vc, rep)) {
        Ok(s) => s,
        Err(_) => return vec![None; Method::ALL.len()],
    };
    let lots = sim.dataset.lots();
    let mut an = Analyzer::new(&sim.dataset, wcfg);
    Method::ALL
        .iter()
        .map(|&m| {
            let res = an.run(m).ok()?;
            let mut covered = 0;
            let mut scored = 0;
            for row in res.rows_at(cfg.t_star) {
                let i = lots.iter().position(|l| Some(l) == row.lot.as_ref())?;
                scored += 1;
                if row.lcl <= sim.true_mean(i, cfg.t_star) {
                    covered += 1;
                }
            }
            Some((covered, scored))
        })
        .collect()
}

/// Pooled coverage of the LCL at `t_star` for the true conditional means.
pub fn run_coverage_grid(cfg: &SimConfig) -> Result<Vec<CoverageRow>> {
    cfg.validate()?;
    let wcfg = cfg.workflow_config();
    let mut out = Vec::new();
    for &vc in &cfg.vcfrac_grid {
        let reps = replicate(cfg.reps_coverage, |r| coverage_rep(cfg, &wcfg, vc, r));
        for (k, m) in Method::ALL.iter().enumerate() {
            let ok: Vec<(usize, usize)> = reps.iter().filter_map(|r| r[k]).collect();
            let covered: usize = ok.iter().map(|c| c.0).sum();
            let scored: usize = ok.iter().map(|c| c.1).sum();
            out.push(CoverageRow {
                vcfrac_true: vc,
                method: m.label().into(),
                coverage: covered as f64 / scored as f64,
                lots_scored: scored,
                reps: ok.len(),
                failures: reps.len() - ok.len(),
            });
        }
    }
    Ok(out)
}

// --------------------------------------------------------------- decision

/// Label of the known-parameter benchmark rows in the decision tables.
pub const EXPECTED_LABEL: &str = "Expected";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub crossing_month: f64,
    pub vcfrac_true: f64,
    pub method: String,
    pub support_rate: f64,
    /// Binomial standard error (0 for the benchmark).
    pub std_error: f64,
    pub reps: usize,
    pub failures: usize,
}

impl TableRecord for DecisionRow {
    fn header() -> Vec<&'static str> {
        vec!["crossing_month", "vcfrac_true", "method", "support_rate", "std_error", "reps", "failures"]
    }
    fn cells(&self) -> Vec<Cell> {
        vec![
            self.crossing_month.into(),
            self.vcfrac_true.into(),
            self.method.as_str().into(),
            self.support_rate.into(),
            self.std_error.into(),
            self.reps.into(),
            self.failures.into(),
        ]
    }
}

/// Expected support under known variance components for the balanced
/// design, from closed-form predictor moments and a Simpson-rule integral
/// over the shared component. Used as the benchmark curve of the decision
/// tables; deliberately independent of the `benchmark` module.
pub fn expected_support_balanced(cfg: &SimConfig, vcfrac: f64, crossing_month: f64) -> Result<f64> {
    let l = cfg.lots as f64;
    let m = cfg.months.len() as f64;
    let tbar = cfg.months.iter().sum::<f64>() / m;
    let sxx = l * cfg.months.iter().map(|t| (t - tbar).powi(2)).sum::<f64>();
    let s2b = vcfrac * cfg.sigma_tot2;
    let s2e = (1.0 - vcfrac) * cfg.sigma_tot2;
    let v = s2b + s2e / m;
    let s = s2b / v;
    let slope = s2e * (cfg.t_star - tbar).powi(2) / sxx;
    // prediction-error variance of the EBLUP-based conditional mean
    let one_s = (1.0 - s) * (1.0 - s);
    let vci = one_s * v / l + one_s * s2b - 2.0 * one_s * s2b / l + s * s * s2e / m + 2.0 * s * (1.0 - s) * s2e / (m * l) + slope;
    let c = cfg.lsl + normal_quantile(1.0 - cfg.alpha)? * vci.sqrt();
    let mu = cfg.beta0 + cfg.beta1(crossing_month) * cfg.t_star;
    // predictors: mu + sqrt(b) W + sqrt(a) U_i
    let a = s * s * v;
    let b = (1.0 - s * s) * v / l + slope;
    if a <= 0.0 {
        return Ok(normal_cdf((mu - c) / b.sqrt()));
    }
    let (sa, sb) = (a.sqrt(), b.sqrt());
    let f = |w: f64| (-0.5 * w * w).exp() / (2.0 * std::f64::consts::PI).sqrt() * normal_cdf((mu - c + sb * w) / sa).powf(l);
    let (lo, hi, n) = (-10.0, 10.0, 40_000usize);
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for k in 1..n {
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(lo + k as f64 * h);
    }
    Ok((acc * h / 3.0).clamp(0.0, 1.0))
}

fn decision_grid(cfg: &SimConfig, crossing: f64, diag: Diagnostic) -> Result<Vec<DecisionRow>> {
    cfg.validate()?;
    let wcfg = cfg.workflow_config();
    let mut out = Vec::new();
    for &vc in &cfg.vcfrac_grid {
        let reps = replicate(cfg.reps_decision, |r| -> Vec<Option<bool>> {
            let sim = match simulate_dataset(cfg, vc, crossing, stream(cfg, diag, vc, r)) {
                Ok(s) => s,
                Err(_) => return vec![None; Method::ALL.len()],
            };
            let mut an = Analyzer::new(&sim.dataset, &wcfg);
            Method::ALL
                .iter()
                .map(|&m| an.run(m).ok().map(|w| w.decision.support_at_t_star))
                .collect()
        });
        for (k, m) in Method::ALL.iter().enumerate() {
            let ok: Vec<bool> = reps.iter().filter_map(|r| r[k]).collect();
            let n = ok.len() as f64;
            let p = ok.iter().filter(|b| **b).count() as f64 / n;
            out.push(DecisionRow {
                crossing_month: crossing,
                vcfrac_true: vc,
                method: m.label().into(),
                support_rate: p,
                std_error: (p * (1.0 - p) / n).sqrt(),
                reps: ok.len(),
                failures: reps.len() - ok.len(),
            });
        }
        out.push(DecisionRow {
            crossing_month: crossing,
            vcfrac_true: vc,
            method: EXPECTED_LABEL.into(),
            support_rate: expected_support_balanced(cfg, vc, crossing)?,
            std_error: 0.0,
            reps: 0,
            failures: 0,
        });
    }
    Ok(out)
}

/// Support rates at `t_star` under the baseline calibration.
pub fn run_decision_grid(cfg: &SimConfig) -> Result<Vec<DecisionRow>> {
    decision_grid(cfg, cfg.crossing_month, Diagnostic::Decision)
}

/// Support rates under the sensitivity calibration.
pub fn run_sensitivity_decision_grid(cfg: &SimConfig) -> Result<Vec<DecisionRow>> {
    decision_grid(cfg, cfg.sensitivity_crossing_month, Diagnostic::Sensitivity)
}

// ----------------------------------------------------------------- output

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Output {
    Fig4,
    Fig5,
    Table2,
    Fig6,
    Fig7,
    Fig8,
    All,
}

impl FromStr for Output {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "fig4" => Output::Fig4,
            "fig5" => Output::Fig5,
            "table2" => Output::Table2,
            "fig6" => Output::Fig6,
            "fig7" => Output::Fig7,
            "fig8" => Output::Fig8,
            "all" => Output::All,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown output '{s}' (fig4|fig5|table2|fig6|fig7|fig8|all)"
                )))
            }
        })
    }
}

impl fmt::Display for Output {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Output::Fig4 => "fig4",
            Output::Fig5 => "fig5",
            Output::Table2 => "table2",
            Output::Fig6 => "fig6",
            Output::Fig7 => "fig7",
            Output::Fig8 => "fig8",
            Output::All => "all",
        })
    }
}

/// File names written for `which`.
pub fn output_files(which: Output) -> Vec<&'static str> {
    match which {
        Output::Fig4 => vec!["fig4_margin.csv"],
        Output::Fig5 => vec!["fig5_ddf.csv"],
        Output::Table2 => vec!["table2_boundary.csv"],
        Output::Fig6 => vec!["fig6_coverage.csv"],
        Output::Fig7 => vec!["fig7_oc.csv"],
        Output::Fig8 => vec!["fig8_oc52.csv"],
        Output::All => vec![
            "fig4_margin.csv",
            "fig5_ddf.csv",
            "table2_boundary.csv",
            "fig6_coverage.csv",
            "fig7_oc.csv",
            "fig8_oc52.csv",
        ],
    }
}

fn write_to<T: TableRecord>(dir: &Path, name: &str, rows: &[T]) -> Result<PathBuf> {
    let path = dir.join(name);
    write_table(rows, BufWriter::new(File::create(&path)?))?;
    Ok(path)
}

/// Runs the diagnostics behind `which` and writes their CSV files into `dir`.
pub fn run_and_write(cfg: &SimConfig, which: Output, dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut written = Vec::new();
    let wants = |o: Output| which == o || which == Output::All;
    if wants(Output::Fig4) || wants(Output::Fig5) {
        let curves = run_margin_df_grid(cfg)?;
        if wants(Output::Fig4) {
            let recs: Vec<MarginRecord> = curves.iter().map(MarginRecord).collect();
            written.push(write_to(dir, "fig4_margin.csv", &recs)?);
        }
        if wants(Output::Fig5) {
            let recs: Vec<DdfRecord> = curves.iter().map(DdfRecord).collect();
            written.push(write_to(dir, "fig5_ddf.csv", &recs)?);
        }
    }
    if wants(Output::Table2) {
        written.push(write_to(dir, "table2_boundary.csv", &summarize_boundary_frequencies(cfg)?)?);
    }
    if wants(Output::Fig6) {
        written.push(write_to(dir, "fig6_coverage.csv", &run_coverage_grid(cfg)?)?);
    }
    if wants(Output::Fig7) {
        written.push(write_to(dir, "fig7_oc.csv", &run_decision_grid(cfg)?)?);
    }
    if wants(Output::Fig8) {
        written.push(write_to(dir, "fig8_oc52.csv", &run_sensitivity_decision_grid(cfg)?)?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dataset_shape() {
        let cfg = SimConfig::default();
        let s = simulate_dataset(&cfg, 0.3, 57.0, RngStream::new(1, 2, 3)).unwrap();
        assert_eq!(s.dataset.n(), 70);
        assert_eq!(s.dataset.n_lots(), 10);
        assert!((cfg.beta1(57.0) + 10.0 / 57.0).abs() < 1e-15);
    }

    #[test]
    fn empty_json_is_the_baseline() {
        let cfg: SimConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, SimConfig::default());
        assert!(serde_json::from_str::<SimConfig>(r#"{"lotz": 3}"#).is_err());
    }

    #[test]
    fn bins() {
        assert_eq!(bin_of(0.0, 20), 0);
        assert_eq!(bin_of(1e-9, 20), 1);
        assert_eq!(bin_of(0.05, 20), 2);
        assert_eq!(bin_of(0.999, 20), 20);
    }

    #[test]
    fn expected_support_limits() {
        let cfg = SimConfig::default();
        let p0 = expected_support_balanced(&cfg, 0.0, 57.0).unwrap();
        assert!((p0 - 0.995).abs() < 0.003, "{p0}");
        let p5 = expected_support_balanced(&cfg, 0.5, 57.0).unwrap();
        assert!((p5 - 0.495).abs() < 0.003, "{p5}");
        let p1 = expected_support_balanced(&cfg, 0.1, 52.0).unwrap();
        assert!((p1 - 0.264).abs() < 0.003, "{p1}");
    }
}
