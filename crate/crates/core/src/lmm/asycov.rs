//! Asymptotic covariance of the variance-component estimates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::reml::RemlProblem;
use super::{FitResult, Theta, VarComp};
use crate::{Error, Result};

/// Relative finite-difference step for the observed Hessian.
const HESS_REL_STEP: f64 = 1e-4;
/// Floor on the step as a fraction of the total variance; without it the
/// second differences at estimates just above zero drown in rounding.
const HESS_MIN_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AsyCovMethod {
    /// Twice the inverse Hessian of `-2 l_R`, by Richardson-refined central
    /// differences.
    #[default]
    ObservedHessian,
    /// Inverse of the expected information `1/2 tr(P V_j P V_k)`.
    ExpectedInformation,
}

/// Covariance matrix over the components in `components` (interior random
/// components first, residual last). Boundary components are excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsyCov {
    pub components: Vec<VarComp>,
    pub matrix: DMatrix<f64>,
}

impl AsyCov {
    pub fn index_of(&self, c: VarComp) -> Option<usize> {
        self.components.iter().position(|&k| k == c)
    }
}

pub fn asycov(fit: &FitResult) -> Result<AsyCov> {
    asycov_with(fit, AsyCovMethod::ObservedHessian)
}

pub fn asycov_with(fit: &FitResult, method: AsyCovMethod) -> Result<AsyCov> {
    let mut components = fit.interior_random();
    components.push(VarComp::Residual);
    let info = match method {
        AsyCovMethod::ObservedHessian => observed_hessian(fit, &components)?,
        AsyCovMethod::ExpectedInformation => expected_information(fit, &components)?.scale(2.0),
    };
    // `info` is on the -2 l_R scale; the covariance is 2 * info^-1
    let chol = info
        .clone()
        .cholesky()
        .ok_or_else(|| Error::AsyCovUnavailable("Hessian of the restricted likelihood is not positive definite".into()))?;
    let matrix = chol.inverse().scale(2.0);
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::AsyCovUnavailable("non-finite covariance".into()));
    }
    Ok(AsyCov { components, matrix })
}

fn observed_hessian(fit: &FitResult, comps: &[VarComp]) -> Result<DMatrix<f64>> {
    let prob = RemlProblem::new(&fit.design, &fit.y);
    let f = |th: &Theta| -> Result<f64> {
        prob.neg2_loglik_extended(th)
            .ok_or_else(|| Error::AsyCovUnavailable("criterion undefined near the estimate".into()))
    };
    let base = fit.theta;
    let total = base.sigma2_b0 + base.sigma2_b1 + base.sigma2_e;
    let h: Vec<f64> = comps
        .iter()
        .map(|&c| (HESS_REL_STEP * base.get(c)).max(HESS_MIN_STEP * total))
        .collect();
    let coarse = central_hessian(&f, &base, comps, &h)?;
    let half: Vec<f64> = h.iter().map(|v| 0.5 * v).collect();
    let fine = central_hessian(&f, &base, comps, &half)?;
    let mut out = (fine.scale(4.0) - coarse).scale(1.0 / 3.0);
    out = (&out + out.transpose()).scale(0.5);
    Ok(out)
}

fn central_hessian<F>(f: &F, base: &Theta, comps: &[VarComp], h: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&Theta) -> Result<f64>,
{
    let k = comps.len();
    let at = |steps: &[(usize, f64)]| -> Result<f64> {
        let mut th = *base;
        for &(j, d) in steps {
            th.set(comps[j], base.get(comps[j]) + d);
        }
        f(&th)
    };
    let f0 = f(base)?;
    let mut hm = DMatrix::zeros(k, k);
    for j in 0..k {
        let fp = at(&[(j, h[j])])?;
        let fm = at(&[(j, -h[j])])?;
        hm[(j, j)] = (fp - 2.0 * f0 + fm) / (h[j] * h[j]);
        for l in 0..j {
            let pp = at(&[(j, h[j]), (l, h[l])])?;
            let pm = at(&[(j, h[j]), (l, -h[l])])?;
            let mp = at(&[(j, -h[j]), (l, h[l])])?;
            let mm = at(&[(j, -h[j]), (l, -h[l])])?;
            let v = (pp - pm - mp + mm) / (4.0 * h[j] * h[l]);
            hm[(j, l)] = v;
            hm[(l, j)] = v;
        }
    }
    Ok(hm)
}

/// Expected information of `l_R`: `I_jk = 1/2 tr(P V_j P V_k)`.
pub(crate) fn expected_information(fit: &FitResult, comps: &[VarComp]) -> Result<DMatrix<f64>> {
    let d = &fit.design;
    let n = d.n();
    let th = fit.theta;
    let mut v = DMatrix::<f64>::identity(n, n).scale(th.sigma2_e);
    let mut derivs: Vec<DMatrix<f64>> = Vec::with_capacity(comps.len());
    for &c in comps {
        let dv = match c {
            VarComp::Residual => DMatrix::identity(n, n),
            _ => {
                let mut m = DMatrix::zeros(n, n);
                for (j, col) in d.z_columns.iter().enumerate() {
                    if col.comp == c {
                        let z: DVector<f64> = d.z.column(j).into_owned();
                        m += &z * z.transpose();
                    }
                }
                m
            }
        };
        derivs.push(dv);
    }
    for (j, col) in d.z_columns.iter().enumerate() {
        let s = th.get(col.comp);
        if s > 0.0 {
            let z: DVector<f64> = d.z.column(j).into_owned();
            v += (&z * z.transpose()).scale(s);
        }
    }
    let vinv = v
        .cholesky()
        .ok_or_else(|| Error::Singular("V is not positive definite".into()))?
        .inverse();
    let vx = &vinv * &d.x;
    let xvx = d.x.transpose() * &vx;
    let xvx_inv = xvx
        .cholesky()
        .ok_or_else(|| Error::Singular("X'V^-1X is singular".into()))?
        .inverse();
    let p = &vinv - &vx * xvx_inv * vx.transpose();
    let pv: Vec<DMatrix<f64>> = derivs.iter().map(|dv| &p * dv).collect();
    let k = comps.len();
    let mut info = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..=a {
            let t = (&pv[a] * &pv[b]).trace() * 0.5;
            info[(a, b)] = t;
            info[(b, a)] = t;
        }
    }
    Ok(info)
}
