//! Restricted likelihood and bounded REML fitting.
//!
//! Every model here has `V = blockdiag_i(sigma2_e (I + Z_i Gamma Z_i'))` with
//! `Z_i = [1, t]` for the lot's rows and `Gamma = diag(gamma0, gamma1)` the
//! variance ratios (a zero ratio switches the effect off). With
//! `M_i = I + Z_i'Z_i Gamma` and `T_i = Gamma M_i^-1` the Woodbury identity
//! gives
//!
//! ```text
//! |H_i| = |M_i|,   H_i^-1 = I - Z_i T_i Z_i'
//! ```
//!
//! so the criterion needs only per-lot 2x2 cross-products. The profiled
//! criterion (residual variance in closed form) is minimized over the
//! nonnegative ratio orthant one face at a time: the interior of the full
//! orthant and every face where a subset of ratios is pinned at zero. The
//! best face wins, ties going to the face with more zeros, which yields exact
//! boundary estimates.

use nalgebra::{Matrix2, Vector2};

use super::asycov::{self, AsyCovMethod};
use super::design::Design;
use super::mme::mme_solve;
use super::{FitResult, LotBlup, Theta, VarComp};
use crate::num::linalg::{matrix_rank, DEFAULT_RANK_TOL};
use crate::num::optim::{nelder_mead_projected, NelderMeadOptions};
use crate::{Error, Result};

/// Fitted components at or below `ZERO_TOL_REL * var(y)` are clamped to zero.
pub const ZERO_TOL_REL: f64 = 1e-10;
const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Criterion ties (in -2 log-likelihood units) resolve toward the boundary.
const FACE_TIE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub starts: Vec<f64>,
    pub ftol: f64,
    pub max_evals: usize,
    pub asycov_method: AsyCovMethod,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: vec![0.0, 0.01, 0.1, 1.0, 10.0],
            ftol: 1e-12,
            max_evals: 4000,
            asycov_method: AsyCovMethod::ObservedHessian,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LotStats {
    /// sum over the lot's rows of [1 t]'[1 t]
    s: Matrix2<f64>,
    /// sum of [1 t]' y
    u: Vector2<f64>,
    yy: f64,
}

/// Sufficient statistics of the restricted likelihood for one dataset.
#[derive(Debug, Clone)]
pub(crate) struct RemlProblem {
    lots: Vec<LotStats>,
    pub n: usize,
    pub p: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Profile {
    /// Profiled -2 l_R.
    pub neg2: f64,
    pub sigma2_e: f64,
}

struct Reduced {
    a: Matrix2<f64>,
    b: Vector2<f64>,
    yhy: f64,
    logdet_h: f64,
}

impl RemlProblem {
    pub fn new(design: &Design, y: &[f64]) -> Self {
        // l_R is invariant to y -> y - X c; working with least-squares
        // residuals keeps the cross-products free of cancellation
        let y = ols_residuals(&design.months, y);
        let y = &y[..];
        let nl = design.lots.len();
        let mut lots = vec![
            LotStats {
                s: Matrix2::zeros(),
                u: Vector2::zeros(),
                yy: 0.0,
            };
            nl
        ];
        for (i, &lot) in design.lot_of_row.iter().enumerate() {
            let z = Vector2::new(1.0, design.months[i]);
            let st = &mut lots[lot];
            st.s += z * z.transpose();
            st.u += z * y[i];
            st.yy += y[i] * y[i];
        }
        Self {
            lots,
            n: y.len(),
            p: 2,
        }
    }

    fn reduce(&self, g0: f64, g1: f64) -> Option<Reduced> {
        let gamma = Matrix2::new(g0, 0.0, 0.0, g1);
        let mut a = Matrix2::zeros();
        let mut b = Vector2::zeros();
        let mut yhy = 0.0;
        let mut logdet_h = 0.0;
        for st in &self.lots {
            let m = Matrix2::identity() + st.s * gamma;
            let det = m.determinant();
            if !(det > 0.0) {
                return None;
            }
            logdet_h += det.ln();
            let t = gamma * m.try_inverse()?;
            let st_s = st.s * t;
            a += st.s - st_s * st.s;
            b += st.u - st_s * st.u;
            yhy += st.yy - st.u.dot(&(t * st.u));
        }
        Some(Reduced { a, b, yhy, logdet_h })
    }

    /// -2 l_R with the residual variance profiled out.
    pub fn profile(&self, g0: f64, g1: f64) -> Option<Profile> {
        let r = self.reduce(g0, g1)?;
        let det_a = r.a.determinant();
        if !(det_a > 0.0) {
            return None;
        }
        let beta = r.a.try_inverse()? * r.b;
        let rss = r.yhy - r.b.dot(&beta);
        if !(rss > 0.0) {
            return None;
        }
        let df = (self.n - self.p) as f64;
        let s2 = rss / df;
        Some(Profile {
            neg2: df * s2.ln() + r.logdet_h + det_a.ln() + df * (1.0 + LN_2PI),
            sigma2_e: s2,
        })
    }

    /// -2 l_R at explicit variance components.
    pub fn neg2_loglik(&self, theta: &Theta) -> Option<f64> {
        if theta.sigma2_b0 < 0.0 || theta.sigma2_b1 < 0.0 {
            return None;
        }
        self.neg2_loglik_extended(theta)
    }

    /// -2 l_R continued to slightly negative random components, for which
    /// `V` stays positive definite. Finite differences at estimates near
    /// zero need this.
    pub fn neg2_loglik_extended(&self, theta: &Theta) -> Option<f64> {
        let e = theta.sigma2_e;
        if !(e > 0.0) {
            return None;
        }
        let r = self.reduce(theta.sigma2_b0 / e, theta.sigma2_b1 / e)?;
        let det_a = r.a.determinant();
        if !(det_a > 0.0) {
            return None;
        }
        let beta = r.a.try_inverse()? * r.b;
        let rss = r.yhy - r.b.dot(&beta);
        let df = (self.n - self.p) as f64;
        Some(df * e.ln() + r.logdet_h + det_a.ln() + rss / e + df * LN_2PI)
    }
}

fn ols_residuals(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let tbar = t.iter().sum::<f64>() / n;
    let ybar = y.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|v| (v - tbar).powi(2)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - tbar) * (b - ybar)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    t.iter().zip(y).map(|(a, b)| b - ybar - slope * (a - tbar)).collect()
}

/// Restricted log-likelihood
/// `-1/2 [log|V| + log|X'V^-1 X| + r'V^-1 r] - (n-p)/2 log(2 pi)`.
pub fn reml_criterion(theta: &Theta, design: &Design, y: &[f64]) -> Result<f64> {
    if !(theta.sigma2_e > 0.0) {
        return Err(Error::InvalidArgument("sigma2_e must be positive".into()));
    }
    if y.len() != design.n() {
        return Err(Error::InvalidArgument("response length does not match design".into()));
    }
    let mut th = *theta;
    for c in [VarComp::LotIntercept, VarComp::LotSlope] {
        if !design.spec.random_components().contains(&c) {
            th.set(c, 0.0);
        }
    }
    RemlProblem::new(design, y)
        .neg2_loglik(&th)
        .map(|v| -0.5 * v)
        .ok_or_else(|| Error::Singular("V or X'V^-1X is singular".into()))
}

pub fn fit_reml(design: &Design, y: &[f64]) -> Result<FitResult> {
    fit_reml_with(design, y, &FitOptions::default())
}

struct FaceOpt {
    /// ratios in scaled units, length of active comps
    u: Vec<f64>,
    f: f64,
}

pub fn fit_reml_with(design: &Design, y: &[f64], opts: &FitOptions) -> Result<FitResult> {
    if y.len() != design.n() {
        return Err(Error::InvalidArgument("response length does not match design".into()));
    }
    let p = matrix_rank(&design.x, DEFAULT_RANK_TOL)?;
    let comps = design.spec.random_components();
    if design.n() <= p + comps.len() + 1 {
        return Err(Error::Dataset(format!(
            "n = {} too small for {} fixed effects and {} variance components",
            design.n(),
            p,
            comps.len() + 1
        )));
    }
    let prob = RemlProblem::new(design, y);

    // scale ratios so that one unit is comparable across components
    let mean_t2 = design.months.iter().map(|t| t * t).sum::<f64>() / design.n() as f64;
    let scale: Vec<f64> = comps
        .iter()
        .map(|c| match c {
            VarComp::LotSlope if mean_t2 > 0.0 => mean_t2,
            _ => 1.0,
        })
        .collect();
    let to_gamma = |u: &[f64]| -> (f64, f64) {
        let mut g = (0.0, 0.0);
        for (k, c) in comps.iter().enumerate() {
            let v = u[k] / scale[k];
            match c {
                VarComp::LotIntercept => g.0 = v,
                VarComp::LotSlope => g.1 = v,
                VarComp::Residual => {}
            }
        }
        g
    };
    let objective = |u: &[f64]| -> f64 {
        let (g0, g1) = to_gamma(u);
        prob.profile(g0, g1).map(|p| p.neg2).unwrap_or(f64::INFINITY)
    };

    let k = comps.len();
    let mut best: Option<(usize, FaceOpt)> = None;
    // faces: bit j set => comp j free
    for mask in (0..(1usize << k)).rev() {
        let free: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
        let face = optimize_face(&objective, k, &free, opts)?;
        let better = match &best {
            None => true,
            Some((bmask, b)) => {
                let fewer_free = mask.count_ones() < bmask.count_ones();
                face.f < b.f - FACE_TIE || (fewer_free && face.f <= b.f + FACE_TIE)
            }
        };
        if better {
            best = Some((mask, face));
        }
    }
    let (_, face) = best.expect("at least one face");
    if !face.f.is_finite() {
        return Err(Error::NonConvergence("restricted likelihood is not finite at any start".into()));
    }

    let (g0, g1) = to_gamma(&face.u);
    let prof = prob
        .profile(g0, g1)
        .ok_or_else(|| Error::Singular("profiled criterion undefined at optimum".into()))?;
    let mut theta = Theta::new(g0 * prof.sigma2_e, g1 * prof.sigma2_e, prof.sigma2_e);

    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let var_y = y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / (y.len() as f64 - 1.0);
    let zero_tol = ZERO_TOL_REL * var_y;
    let mut boundary = Vec::with_capacity(k);
    for c in comps {
        let at_zero = theta.get(*c) <= zero_tol;
        if at_zero {
            theta.set(*c, 0.0);
        }
        boundary.push((*c, at_zero));
    }
    // re-profile if anything was clamped away from the face optimum
    if boundary.iter().any(|(_, b)| *b) {
        let (h0, h1) = (theta.sigma2_b0 / theta.sigma2_e, theta.sigma2_b1 / theta.sigma2_e);
        if let Some(p2) = prob.profile(h0, h1) {
            theta = Theta::new(h0 * p2.sigma2_e, h1 * p2.sigma2_e, p2.sigma2_e);
        }
    }
    kkt_check(&prob, &theta, &boundary)?;
    assemble_fit(design, y, theta, boundary, &prob, opts.asycov_method, None)
}

fn optimize_face<F>(objective: &F, k: usize, free: &[usize], opts: &FitOptions) -> Result<FaceOpt>
where
    F: Fn(&[f64]) -> f64,
{
    let embed = |x: &[f64]| -> Vec<f64> {
        let mut u = vec![0.0; k];
        for (i, &j) in free.iter().enumerate() {
            u[j] = x[i];
        }
        u
    };
    if free.is_empty() {
        let u = vec![0.0; k];
        return Ok(FaceOpt { f: objective(&u), u });
    }
    let d = free.len();
    let lower = vec![0.0; d];
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    let mut starts: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..d {
        starts = starts
            .into_iter()
            .flat_map(|s| {
                opts.starts.iter().map(move |v| {
                    let mut t = s.clone();
                    t.push(*v);
                    t
                })
            })
            .collect();
    }
    for x0 in starts {
        let step: Vec<f64> = x0.iter().map(|v| (0.5 * v).max(0.05)).collect();
        let nm = NelderMeadOptions {
            ftol: opts.ftol,
            xtol: 1e-9,
            max_evals: opts.max_evals,
            initial_step: step,
        };
        let mut res = nelder_mead_projected(|x| objective(&embed(x)), &x0, &lower, &nm);
        // one restart from the best vertex guards against premature collapse
        let step2: Vec<f64> = res.x.iter().map(|v| (0.05 * v).max(1e-4)).collect();
        let nm2 = NelderMeadOptions { initial_step: step2, ..nm };
        let res2 = nelder_mead_projected(|x| objective(&embed(x)), &res.x, &lower, &nm2);
        if res2.f <= res.f {
            res.x = res2.x.clone();
            res.f = res2.f;
        }
        res.converged = res2.converged;
        match &best {
            Some((_, f, _)) if *f <= res.f => {}
            _ => best = Some((res.x, res.f, res.converged)),
        }
    }
    let (x, f, converged) = best.expect("starts");
    if !converged && f.is_finite() {
        return Err(Error::NonConvergence(format!(
            "simplex budget exhausted on face {free:?} (f = {f})"
        )));
    }
    Ok(FaceOpt { u: embed(&x), f })
}

/// A boundary component must not improve the criterion when nudged inward.
fn kkt_check(prob: &RemlProblem, theta: &Theta, boundary: &[(VarComp, bool)]) -> Result<()> {
    let base = match prob.neg2_loglik(theta) {
        Some(v) => v,
        None => return Ok(()),
    };
    for (c, at) in boundary {
        if !at {
            continue;
        }
        let mut t = *theta;
        let h = 1e-6 * theta.sigma2_e
            / match c {
                VarComp::LotSlope => 1e3,
                _ => 1.0,
            };
        t.set(*c, h);
        if let Some(v) = prob.neg2_loglik(&t) {
            // allow for the O(h^2) gap between profiled and fixed sigma2_e
            if v < base - 1e-7 {
                return Err(Error::NonConvergence(format!(
                    "{} clamped at zero but the likelihood increases inward",
                    c.label()
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn assemble_fit(
    design: &Design,
    y: &[f64],
    theta: Theta,
    boundary: Vec<(VarComp, bool)>,
    prob: &RemlProblem,
    method: AsyCovMethod,
    asycov_override: Option<super::AsyCov>,
) -> Result<FitResult> {
    let sol = mme_solve(&theta, design, y)?;
    let neg2 = prob
        .neg2_loglik(&theta)
        .ok_or_else(|| Error::Singular("criterion undefined at estimate".into()))?;
    let nl = design.lots.len();
    let blups = (0..nl)
        .map(|l| LotBlup {
            lot: design.lots[l].clone(),
            b0: design.z_column(l, VarComp::LotIntercept).map(|j| sol.b[j]).unwrap_or(0.0),
            b1: design.z_column(l, VarComp::LotSlope).map(|j| sol.b[j]).unwrap_or(0.0),
        })
        .collect();
    let mut fit = FitResult {
        spec: design.spec,
        theta,
        beta: sol.beta,
        blups,
        mme_inverse: sol.c,
        reml_loglik: -0.5 * neg2,
        asycov: None,
        asycov_note: None,
        boundary,
        n: prob.n,
        p: prob.p,
        design_fingerprint: design.fingerprint(),
        design: design.clone(),
        y: y.to_vec(),
    };
    match asycov_override {
        Some(a) => fit.asycov = Some(a),
        None => match asycov::asycov_with(&fit, method) {
            Ok(a) => fit.asycov = Some(a),
            Err(e) => fit.asycov_note = Some(e.to_string()),
        },
    }
    Ok(fit)
}

/// Builds a fit with variance components held at `theta` (no estimation).
///
/// Components at zero are flagged as boundary. `asycov` replaces the
/// computed asymptotic covariance when given, e.g. with a matrix reported by
/// other software.
pub fn fit_with_theta(design: &Design, y: &[f64], theta: Theta, asycov: Option<super::AsyCov>) -> Result<FitResult> {
    if y.len() != design.n() {
        return Err(Error::InvalidArgument("response length does not match design".into()));
    }
    let mut th = theta;
    let mut boundary = Vec::new();
    for c in [VarComp::LotIntercept, VarComp::LotSlope] {
        if design.spec.random_components().contains(&c) {
            if th.get(c) < 0.0 {
                return Err(Error::InvalidArgument(format!("{} must be >= 0", c.label())));
            }
            boundary.push((c, th.get(c) == 0.0));
        } else {
            th.set(c, 0.0);
        }
    }
    let prob = RemlProblem::new(design, y);
    assemble_fit(design, y, th, boundary, &prob, AsyCovMethod::ObservedHessian, asycov)
}
