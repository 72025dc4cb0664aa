//! `P(min_i X_i >= c)` for `X ~ N(mean, cov)`.
//!
//! When the covariance is compound symmetric (`a I + b J`, `b >= 0`) the event
//! factorizes given the shared component, leaving a one-dimensional integral
//! that is evaluated by composite Gauss-Legendre quadrature. Any other
//! covariance falls back to a fixed-seed Monte Carlo estimate.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::rng::RngStream;
use super::special::{normal_cdf, normal_pdf};
use crate::{Error, Result};

/// Monte Carlo sample size of the general path.
pub const MC_DRAWS: usize = 2_000_000;
const MC_SEED: u64 = 0x5EED_0F_A11;
const CS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvnMethod {
    Quadrature,
    MonteCarlo,
}

fn validate(mean: &[f64], cov: &DMatrix<f64>) -> Result<()> {
    let l = mean.len();
    if l == 0 || cov.nrows() != l || cov.ncols() != l {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: mean {l}, cov {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for i in 0..l {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * scale.max(1.0) {
                return Err(Error::InvalidArgument("covariance is not symmetric".into()));
            }
        }
    }
    if super::linalg::min_eigenvalue(cov) < -1e-10 {
        return Err(Error::InvalidArgument(
            "covariance is not positive semidefinite".into(),
        ));
    }
    Ok(())
}

/// If `cov = a I + b J` within tolerance, returns `(a, b)`.
pub fn compound_symmetry(cov: &DMatrix<f64>) -> Option<(f64, f64)> {
    let l = cov.nrows();
    let d = cov[(0, 0)];
    let o = if l > 1 { cov[(0, 1)] } else { 0.0 };
    let tol = CS_TOL * d.abs().max(1.0);
    for i in 0..l {
        for j in 0..l {
            let want = if i == j { d } else { o };
            if (cov[(i, j)] - want).abs() > tol {
                return None;
            }
        }
    }
    let a = d - o;
    if o < -tol || a < -tol {
        return None;
    }
    Some((a.max(0.0), o.max(0.0)))
}

/// Probability that every coordinate is at or above `threshold`.
///
/// Picks quadrature for compound-symmetric covariances, Monte Carlo otherwise.
pub fn mvn_all_above(mean: &[f64], cov: &DMatrix<f64>, threshold: f64) -> Result<(f64, MvnMethod)> {
    validate(mean, cov)?;
    match compound_symmetry(cov) {
        Some((a, b)) => Ok((cs_probability(mean, a, b, threshold), MvnMethod::Quadrature)),
        None => Ok((mc_probability(mean, cov, threshold, MC_DRAWS)?, MvnMethod::MonteCarlo)),
    }
}

/// Quadrature path; errors unless `cov` is compound symmetric.
pub fn mvn_all_above_compound(mean: &[f64], cov: &DMatrix<f64>, threshold: f64) -> Result<f64> {
    validate(mean, cov)?;
    let (a, b) = compound_symmetry(cov)
        .ok_or_else(|| Error::InvalidArgument("covariance is not compound symmetric".into()))?;
    Ok(cs_probability(mean, a, b, threshold))
}

/// Monte Carlo path with the fixed seed and `draws` samples.
pub fn mvn_all_above_mc(mean: &[f64], cov: &DMatrix<f64>, threshold: f64, draws: usize) -> Result<f64> {
    validate(mean, cov)?;
    mc_probability(mean, cov, threshold, draws)
}

fn cs_probability(mean: &[f64], a: f64, b: f64, c: f64) -> f64 {
    let mmin = mean.iter().cloned().fold(f64::INFINITY, f64::min);
    if a <= 0.0 {
        if b <= 0.0 {
            return if mmin >= c { 1.0 } else { 0.0 };
        }
        return normal_cdf((mmin - c) / b.sqrt());
    }
    let sa = a.sqrt();
    if b <= 0.0 {
        return mean.iter().map(|m| normal_cdf((m - c) / sa)).product();
    }
    let sb = b.sqrt();
    // integrand in the shared factor w ~ N(0,1)
    let integrand = |w: f64| -> f64 {
        let mut prod = normal_pdf(w);
        for m in mean {
            prod *= normal_cdf((m - c + sb * w) / sa);
            if prod == 0.0 {
                break;
            }
        }
        prod
    };
    // breakpoints: a uniform mesh plus a refined mesh around the transition
    // w0 where the conditional probabilities switch on.
    const LIM: f64 = 12.0;
    let mut cuts: Vec<f64> = (0..=48).map(|k| -LIM + k as f64 * (2.0 * LIM / 48.0)).collect();
    let w0 = (c - mmin) / sb;
    let width = sa / sb;
    for k in -16..=16 {
        let p = w0 + k as f64 * width * 0.75;
        if p > -LIM && p < LIM {
            cuts.push(p);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-14);
    let (nodes, weights) = gauss_legendre(16);
    let mut total = 0.0;
    for win in cuts.windows(2) {
        let (lo, hi) = (win[0], win[1]);
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (x, wt) in nodes.iter().zip(&weights) {
            total += wt * half * integrand(mid + half * x);
        }
    }
    total.clamp(0.0, 1.0)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 + 1.0) * z * p2 - j as f64 * p3) / (j as f64 + 1.0);
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn mc_probability(mean: &[f64], cov: &DMatrix<f64>, c: f64, draws: usize) -> Result<f64> {
    let l = mean.len();
    let eig = cov.clone().symmetric_eigen();
    let mut factor = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    const CHUNK: usize = 50_000;
    let chunks = draws.div_ceil(CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(MC_SEED, l as u64, k as u64).rng();
            let count = CHUNK.min(draws - k * CHUNK);
            let mut z = DVector::zeros(l);
            let mut x = DVector::zeros(l);
            let mut hit = 0usize;
            for _ in 0..count {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(&mut rng);
                }
                factor.mul_to(&z, &mut x);
                if x.iter().zip(mean).all(|(xi, m)| xi + m >= c) {
                    hit += 1;
                }
            }
            hit
        })
        .sum();
    Ok(hits as f64 / draws as f64)
}
