//! Step-by-step reconstruction of the Satterthwaite DDF for one scored
//! point, for auditing what mixed-model software reports.
//!
//! The prediction-error variance and its gradient are recomputed here from
//! the dense marginal covariance `V = Z G Z' + sigma2_e I` and Henderson's
//! closed-form blocks, not from the mixed-model equations the engine uses,
//! so agreement between the two DDFs is a genuine cross-check.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Cell, TableRecord};
use crate::ddf::{satterthwaite_ddf, Target};
use crate::lmm::{contrast, point_and_variance, Design, FitResult, PredictionKind, Theta, VarComp};
use crate::num::t_quantile;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebuildRow {
    pub kind: PredictionKind,
    pub lot: String,
    pub month: f64,
    pub prediction: f64,
    pub v_hat: f64,
    pub components: Vec<VarComp>,
    /// `dv/dtheta` over `components`.
    pub gradient: Vec<f64>,
    pub quad_form: f64,
    pub nu_rebuilt: f64,
    pub nu_engine: f64,
    /// One-sided `t(1 - alpha, nu_rebuilt)`.
    pub t_multiplier: f64,
}

impl RebuildRow {
    fn grad(&self, c: VarComp) -> Option<f64> {
        self.components.iter().position(|x| *x == c).map(|i| self.gradient[i])
    }
}

impl TableRecord for RebuildRow {
    fn header() -> Vec<&'static str> {
        vec![
            "kind",
            "lot",
            "month",
            "prediction",
            "v_hat",
            "g_sigma2_b0",
            "g_sigma2_b1",
            "g_sigma2_e",
            "quad_form",
            "nu_rebuilt",
            "nu_engine",
            "t_multiplier",
        ]
    }
    fn cells(&self) -> Vec<Cell> {
        vec![
            self.kind.label().into(),
            self.lot.as_str().into(),
            self.month.into(),
            self.prediction.into(),
            self.v_hat.into(),
            self.grad(VarComp::LotIntercept).into(),
            self.grad(VarComp::LotSlope).into(),
            self.grad(VarComp::Residual).into(),
            self.quad_form.into(),
            self.nu_rebuilt.into(),
            self.nu_engine.into(),
            self.t_multiplier.into(),
        ]
    }
}

/// Prediction-error variance of `lambda' (beta, b)` from dense matrices:
/// `x'Qx - 2 x'Q X'V^-1 Z G z + z'(G - G Z'P Z G) z` with
/// `Q = (X'V^-1 X)^-1` and `P = V^-1 - V^-1 X Q X' V^-1`.
fn dense_pev(design: &Design, theta: &Theta, lambda: &DVector<f64>) -> Result<f64> {
    let n = design.n();
    let g = DVector::from_iterator(design.q(), design.z_columns.iter().map(|c| theta.get(c.comp)));
    let zg = &design.z * DMatrix::from_diagonal(&g);
    let v = &zg * design.z.transpose() + DMatrix::identity(n, n) * theta.sigma2_e;
    let vinv = v
        .cholesky()
        .ok_or_else(|| Error::Singular("marginal covariance is not positive definite".into()))?
        .inverse();
    let x = &design.x;
    let q = (x.transpose() * &vinv * x)
        .try_inverse()
        .ok_or_else(|| Error::Singular("X'V^-1X is singular".into()))?;
    let p = &vinv - &vinv * x * &q * x.transpose() * &vinv;
    let lx = lambda.rows(0, 2).into_owned();
    let lz = lambda.rows(2, design.q()).into_owned();
    let gz = DVector::from_iterator(design.q(), g.iter().zip(lz.iter()).map(|(a, b)| a * b));
    let cross = &q * x.transpose() * &vinv * &design.z * &gz;
    let zpz = design.z.transpose() * &p * &design.z;
    let v_fixed = (lx.transpose() * &q * &lx)[(0, 0)];
    let v_cross = (lx.transpose() * cross)[(0, 0)];
    let v_random = (lz.transpose() * &gz)[(0, 0)] - (gz.transpose() * zpz * &gz)[(0, 0)];
    Ok(v_fixed - 2.0 * v_cross + v_random)
}

/// Rebuilds the Satterthwaite DDF for the conditional mean of `lot` at
/// `month` and for the marginal mean at `month`, using the fit's asymptotic
/// covariance. Requires every random component to be interior.
pub fn rebuild_report(fit: &FitResult, lot: &str, month: f64, alpha: f64) -> Result<Vec<RebuildRow>> {
    if fit.spec.random_components().is_empty() {
        return Err(Error::SattUnavailable("the pooled model has no variance components to differentiate".into()));
    }
    if fit.spec.random_components().iter().any(|c| fit.is_boundary(*c)) {
        return Err(Error::SattUnavailable(
            "a variance component is on the boundary; the delta method is undefined there and the engine reverts to the residual DDF".into(),
        ));
    }
    let asycov = fit
        .asycov
        .as_ref()
        .ok_or_else(|| Error::AsyCovUnavailable(fit.asycov_note.clone().unwrap_or_else(|| "not computed".into())))?;
    let li = fit.lot_index(lot)?;
    let total = fit.theta.sigma2_b0 + fit.theta.sigma2_b1 + fit.theta.sigma2_e;
    let mut rows = Vec::new();
    for (kind, target) in [
        (PredictionKind::Conditional, Target::conditional(li, month)),
        (PredictionKind::Marginal, Target::marginal(month)),
    ] {
        let lambda = contrast(&fit.design, target.lot, month, kind)?;
        let v = dense_pev(&fit.design, &fit.theta, &lambda)?;
        let gradient = asycov
            .components
            .iter()
            .map(|&c| {
                let theta0 = fit.theta.get(c);
                let h = (1e-4 * theta0).max(1e-7 * total);
                let mut up = fit.theta;
                up.set(c, theta0 + h);
                let mut dn = fit.theta;
                dn.set(c, theta0 - h);
                Ok((dense_pev(&fit.design, &up, &lambda)? - dense_pev(&fit.design, &dn, &lambda)?) / (2.0 * h))
            })
            .collect::<Result<Vec<f64>>>()?;
        let gv = DVector::from_column_slice(&gradient);
        let quad_form = (gv.transpose() * &asycov.matrix * &gv)[(0, 0)];
        if !(quad_form > 0.0) {
            return Err(Error::SattUnavailable(format!("g'Omega g = {quad_form} is not positive")));
        }
        let nu = 2.0 * v * v / quad_form;
        let (prediction, _) = point_and_variance(fit, target.lot, month, kind)?;
        rows.push(RebuildRow {
            kind,
            lot: lot.to_string(),
            month,
            prediction,
            v_hat: v,
            components: asycov.components.clone(),
            gradient,
            quad_form,
            nu_rebuilt: nu,
            nu_engine: satterthwaite_ddf(fit, &target)?.nu,
            t_multiplier: t_quantile(1.0 - alpha, nu)?,
        });
    }
    Ok(rows)
}

/// Pull schedule of the balanced reference design.
pub const REFERENCE_MONTHS: [f64; 9] = [0.0, 3.0, 6.0, 9.0, 12.0, 24.0, 36.0, 48.0, 60.0];
/// Number of lots of the balanced reference design.
pub const REFERENCE_LOTS: usize = 14;
/// Published variance components `(sigma2_b0, sigma2_e)` of the worked example.
pub const REFERENCE_THETA: (f64, f64) = (0.004491, 0.2360);
/// Published asymptotic covariance over `(sigma2_b0, sigma2_e)`.
pub const REFERENCE_OMEGA: [[f64; 2]; 2] = [[1.57e-4, -1.11e-4], [-1.11e-4, 1.00e-3]];

/// Random-intercept fit held at the published worked-example estimates on a
/// balanced 14-lot, 9-pull design (lots `A`..`N`), carrying the published
/// asymptotic covariance. Responses are a noiseless linear trend; only the
/// variance quantities are meaningful.
pub fn reference_fit() -> Result<FitResult> {
    use crate::data::{Observation, StabilityDataset};
    use crate::lmm::{build_design, fit_with_theta, AsyCov, ModelSpec};
    let mut rows = Vec::new();
    for l in 0..REFERENCE_LOTS {
        for &m in &REFERENCE_MONTHS {
            rows.push(Observation {
                lot: ((b'A' + l as u8) as char).to_string(),
                month: m,
                value: 100.0 - 0.1 * m,
            });
        }
    }
    let ds = StabilityDataset::new(rows, "assay", 90.0)?;
    let design = build_design(&ds, ModelSpec::Ri);
    let omega = AsyCov {
        components: vec![VarComp::LotIntercept, VarComp::Residual],
        matrix: DMatrix::from_fn(2, 2, |i, j| REFERENCE_OMEGA[i][j]),
    };
    let theta = Theta::new(REFERENCE_THETA.0, 0.0, REFERENCE_THETA.1);
    fit_with_theta(&design, &ds.values(), theta, Some(omega))
}
