//! Known-parameter baselines: the pooled-regression reference crossing, the
//! prediction-error variance of the conditional-mean predictor at the true
//! variance components, and the probability that every lot passes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Cell, Observation, StabilityDataset, TableRecord};
use crate::lmm::{build_design, contrast, contrast_variance, Design, MmeSystem, ModelSpec, PredictionKind, Theta};
use crate::num::{mvn_all_above, mvn_all_above_mc, normal_quantile, MvnMethod};
use crate::sim::SimConfig;
use crate::{Error, Result};

/// Monte Carlo draws used for the cross-check column.
pub const CHECK_DRAWS: usize = 1_000_000;

/// Design, true parameters and decision settings of a benchmark evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkInputs {
    pub lots: usize,
    pub months: Vec<f64>,
    pub beta0: f64,
    pub beta1: f64,
    pub sigma2_b0: f64,
    pub sigma2_e: f64,
    pub lsl: f64,
    pub t_star: f64,
    pub alpha: f64,
}

impl BenchmarkInputs {
    /// Inputs matching the simulation design at `vcfrac` under the calibration
    /// whose mean crosses `lsl` at `crossing_month`.
    pub fn from_sim(cfg: &SimConfig, vcfrac: f64, crossing_month: f64) -> Self {
        Self {
            lots: cfg.lots,
            months: cfg.months.clone(),
            beta0: cfg.beta0,
            beta1: cfg.beta1(crossing_month),
            sigma2_b0: vcfrac * cfg.sigma_tot2,
            sigma2_e: (1.0 - vcfrac) * cfg.sigma_tot2,
            lsl: cfg.lsl,
            t_star: cfg.t_star,
            alpha: cfg.alpha,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.lots < 2 || self.months.len() < 2 {
            return bad("need at least 2 lots and 2 months");
        }
        if !(self.sigma2_e > 0.0) || !(self.sigma2_b0 >= 0.0) {
            return bad("variance components must satisfy sigma2_e > 0, sigma2_b0 >= 0");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.lots * self.months.len()
    }

    /// Mean pull month.
    pub fn t_bar(&self) -> f64 {
        self.months.iter().sum::<f64>() / self.months.len() as f64
    }

    /// Pooled-regression `S_xx` over all `n` observations.
    pub fn sxx(&self) -> f64 {
        let tb = self.t_bar();
        self.lots as f64 * self.months.iter().map(|t| (t - tb).powi(2)).sum::<f64>()
    }

    pub fn theta(&self) -> Theta {
        Theta::new(self.sigma2_b0, 0.0, self.sigma2_e)
    }

    pub fn mean_at(&self, t: f64) -> f64 {
        self.beta0 + self.beta1 * t
    }

    /// Random-intercept design of the balanced schedule.
    pub fn design(&self) -> Result<Design> {
        let mut rows = Vec::with_capacity(self.n());
        for l in 0..self.lots {
            for &t in &self.months {
                rows.push(Observation {
                    lot: format!("L{l:03}"),
                    month: t,
                    value: self.mean_at(t),
                });
            }
        }
        Ok(build_design(&StabilityDataset::new(rows, "benchmark", self.lsl)?, ModelSpec::Ri))
    }
}

/// Month at which the pooled-regression lower confidence limit for the mean
/// reaches `lsl`, for the case without lot variation. Searches from the last
/// pull up to ten times the mean-crossing month.
pub fn ols_reference_crossing(inputs: &BenchmarkInputs) -> Result<f64> {
    inputs.validate()?;
    let z = normal_quantile(1.0 - inputs.alpha)?;
    let (n, tb, sxx) = (inputs.n() as f64, inputs.t_bar(), inputs.sxx());
    let se = inputs.sigma2_e.sqrt();
    let f = |t: f64| inputs.mean_at(t) - z * se * (1.0 / n + (t - tb).powi(2) / sxx).sqrt() - inputs.lsl;
    let last = inputs.months.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let crossing = if inputs.beta1 < 0.0 {
        (inputs.lsl - inputs.beta0) / inputs.beta1
    } else {
        f64::INFINITY
    };
    let (mut lo, mut hi) = (last, 10.0 * crossing);
    if !hi.is_finite() || !(f(lo) > 0.0) || !(f(hi) < 0.0) {
        return Err(Error::NoCrossing { lo, hi });
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Prediction-error variance of the conditional mean of lot `lot` at
/// `t_star`, from the inverse mixed-model coefficient matrix at `theta`.
pub fn vci_known(theta: &Theta, design: &Design, lot: usize, t_star: f64) -> Result<f64> {
    let c = MmeSystem::new(design).inverse(theta)?;
    let lambda = contrast(design, Some(lot), t_star, PredictionKind::Conditional)?;
    Ok(contrast_variance(&c, &lambda))
}

/// Mean vector and covariance of the lot conditional-mean predictors at
/// `t_star`, with `theta` known and the fixed effects estimated.
///
/// The predictors are linear in `y`, `mu_hat = A y` with
/// `A = Lambda' C [X Z]' / sigma2_e`, so their covariance is `A V A'`.
pub fn predictor_moments(theta: &Theta, design: &Design, beta: [f64; 2], t_star: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let c = MmeSystem::new(design).inverse(theta)?;
    let l = design.lots.len();
    let dim = c.nrows();
    let mut lam = DMatrix::zeros(l, dim);
    for i in 0..l {
        let row = contrast(design, Some(i), t_star, PredictionKind::Conditional)?;
        lam.row_mut(i).copy_from(&row.transpose());
    }
    let a = &lam * &c * design.xz().transpose() / theta.sigma2_e;
    let mut v = DMatrix::identity(design.n(), design.n()) * theta.sigma2_e;
    for (j, col) in design.z_columns.iter().enumerate() {
        let z = design.z.column(j);
        v += (z * z.transpose()) * theta.get(col.comp);
    }
    let cov = &a * v * a.transpose();
    let cov = 0.5 * (&cov + cov.transpose());
    let mean = &a * (&design.x * DVector::from_column_slice(&beta));
    Ok((mean.iter().cloned().collect(), cov))
}

/// Result of one benchmark evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkValue {
    pub vci: f64,
    /// `lsl + z(1-alpha) sqrt(vci)`: every predictor must reach it.
    pub threshold: f64,
    pub probability: f64,
    pub quadrature: bool,
}

/// Probability that every lot's known-parameter LCL at `t_star` is at or
/// above `lsl`.
pub fn benchmark_support_probability(inputs: &BenchmarkInputs) -> Result<BenchmarkValue> {
    inputs.validate()?;
    let design = inputs.design()?;
    let theta = inputs.theta();
    let vci = vci_known(&theta, &design, 0, inputs.t_star)?;
    let threshold = inputs.lsl + normal_quantile(1.0 - inputs.alpha)? * vci.sqrt();
    let (mean, cov) = predictor_moments(&theta, &design, [inputs.beta0, inputs.beta1], inputs.t_star)?;
    let (probability, method) = mvn_all_above(&mean, &cov, threshold)?;
    Ok(BenchmarkValue {
        vci,
        threshold,
        probability,
        quadrature: method == MvnMethod::Quadrature,
    })
}

/// Monte Carlo evaluation of the same probability, for cross-checking.
pub fn benchmark_support_probability_mc(inputs: &BenchmarkInputs, draws: usize) -> Result<f64> {
    inputs.validate()?;
    let design = inputs.design()?;
    let theta = inputs.theta();
    let vci = vci_known(&theta, &design, 0, inputs.t_star)?;
    let threshold = inputs.lsl + normal_quantile(1.0 - inputs.alpha)? * vci.sqrt();
    let (mean, cov) = predictor_moments(&theta, &design, [inputs.beta0, inputs.beta1], inputs.t_star)?;
    mvn_all_above_mc(&mean, &cov, threshold, draws)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub crossing_month: f64,
    pub vcfrac_true: f64,
    pub vci: f64,
    pub threshold: f64,
    pub probability: f64,
    pub probability_mc: f64,
}

impl TableRecord for BenchmarkRow {
    fn header() -> Vec<&'static str> {
        vec!["crossing_month", "vcfrac_true", "vci", "threshold", "probability", "probability_mc"]
    }
    fn cells(&self) -> Vec<Cell> {
        vec![
            self.crossing_month.into(),
            self.vcfrac_true.into(),
            self.vci.into(),
            self.threshold.into(),
            self.probability.into(),
            self.probability_mc.into(),
        ]
    }
}

/// Benchmark over the vcfrac grid for both calibrations of `cfg`.
pub fn benchmark_table(cfg: &SimConfig) -> Result<Vec<BenchmarkRow>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for crossing in [cfg.crossing_month, cfg.sensitivity_crossing_month] {
        for &vc in &cfg.vcfrac_grid {
            let inputs = BenchmarkInputs::from_sim(cfg, vc, crossing);
            let v = benchmark_support_probability(&inputs)?;
            out.push(BenchmarkRow {
                crossing_month: crossing,
                vcfrac_true: vc,
                vci: v.vci,
                threshold: v.threshold,
                probability: v.probability,
                probability_mc: benchmark_support_probability_mc(&inputs, CHECK_DRAWS)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_constants() {
        let b = BenchmarkInputs::from_sim(&SimConfig::default(), 0.0, 57.0);
        assert!((b.t_bar() - 90.0 / 7.0).abs() < 1e-12);
        assert!((b.sxx() - 68940.0 / 7.0).abs() < 1e-9);
    }

    #[test]
    fn reference_crossing_limits() {
        let mut b = BenchmarkInputs::from_sim(&SimConfig::default(), 0.0, 57.0);
        let t = ols_reference_crossing(&b).unwrap();
        assert!((t - 53.04).abs() < 0.05, "{t}");
        b.sigma2_e = 1e-12;
        assert!((ols_reference_crossing(&b).unwrap() - 57.0).abs() < 1e-3);
        b.beta1 = 0.1;
        assert!(matches!(ols_reference_crossing(&b), Err(Error::NoCrossing { .. })));
    }

    #[test]
    fn vci_is_lot_independent() {
        let b = BenchmarkInputs::from_sim(&SimConfig::default(), 0.3, 57.0);
        let d = b.design().unwrap();
        let v0 = vci_known(&b.theta(), &d, 0, 48.0).unwrap();
        for l in 1..10 {
            assert!((vci_known(&b.theta(), &d, l, 48.0).unwrap() - v0).abs() < 1e-12);
        }
    }

    #[test]
    fn vci_small_lot_variance_limit() {
        let mut b = BenchmarkInputs::from_sim(&SimConfig::default(), 0.0, 57.0);
        b.sigma2_b0 = 1e-12;
        let d = b.design().unwrap();
        let v = vci_known(&b.theta(), &d, 3, 48.0).unwrap();
        let ols = b.sigma2_e * (1.0 / 70.0 + (48.0 - b.t_bar()).powi(2) / b.sxx());
        assert!((v - ols).abs() < 1e-9, "{v} vs {ols}");
    }
}
