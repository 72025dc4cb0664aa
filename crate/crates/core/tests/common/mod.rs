//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use stablab::data::{Observation, StabilityDataset};
use stablab::lmm::{Design, Theta};
use stablab::num::{rng_normal, RngStream};

pub const SIM_MONTHS: [f64; 7] = [0.0, 3.0, 6.0, 9.0, 12.0, 24.0, 36.0];
pub const WORKED_MONTHS: [f64; 9] = [0.0, 3.0, 6.0, 9.0, 12.0, 24.0, 36.0, 48.0, 60.0];

/// Balanced random-intercept data with lots named `A`, `B`, ...
pub fn ri_dataset(lots: usize, months: &[f64], sigma2_b0: f64, sigma2_e: f64, seed: u64, rep: u64) -> StabilityDataset {
    let z = rng_normal(RngStream::new(seed, 9_999, rep), lots * (months.len() + 1));
    let mut rows = Vec::new();
    for l in 0..lots {
        let b = sigma2_b0.sqrt() * z[l];
        for (j, &m) in months.iter().enumerate() {
            let e = sigma2_e.sqrt() * z[lots + l * months.len() + j];
            rows.push(Observation {
                lot: lot_name(l),
                month: m,
                value: 100.0 - 10.0 / 57.0 * m + b + e,
            });
        }
    }
    StabilityDataset::new(rows, "assay", 90.0).unwrap()
}

pub fn lot_name(l: usize) -> String {
    if l < 26 {
        ((b'A' + l as u8) as char).to_string()
    } else {
        format!("L{l:03}")
    }
}

/// Dense `V = Z G Z' + sigma2_e I`.
pub fn dense_v(design: &Design, theta: &Theta) -> DMatrix<f64> {
    let n = design.n();
    let mut v = DMatrix::identity(n, n) * theta.sigma2_e;
    for (j, col) in design.z_columns.iter().enumerate() {
        let z = design.z.column(j).into_owned();
        v += (&z * z.transpose()) * theta.get(col.comp);
    }
    v
}

/// Restricted log-likelihood evaluated from dense matrices.
pub fn dense_reml(design: &Design, y: &[f64], theta: &Theta) -> f64 {
    let n = design.n();
    let p = 2.0;
    let v = dense_v(design, theta);
    let chol = v.clone().cholesky().unwrap();
    let logdet_v = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let vinv = chol.inverse();
    let x = &design.x;
    let xvx = x.transpose() * &vinv * x;
    let yv = DVector::from_column_slice(y);
    let beta = xvx.clone().try_inverse().unwrap() * x.transpose() * &vinv * &yv;
    let r = &yv - x * beta;
    let quad = (r.transpose() * &vinv * &r)[(0, 0)];
    -0.5 * (logdet_v + xvx.determinant().ln() + quad) - 0.5 * (n as f64 - p) * (2.0 * std::f64::consts::PI).ln()
}

fn golden<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    // maximizes f on [a, b]
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Maximum of the RI restricted likelihood by a 400 x 400 log-spaced grid
/// (with the zero boundary included) followed by coordinate-wise golden
/// section refinement.
pub fn grid_search_ri<F: Fn(f64, f64) -> f64>(loglik: F, var_y: f64) -> (f64, f64, f64) {
    let k = 400;
    let b_grid: Vec<f64> = std::iter::once(0.0)
        .chain((0..k - 1).map(|i| var_y * 10f64.powf(-6.0 + 7.0 * i as f64 / (k - 2) as f64)))
        .collect();
    let e_grid: Vec<f64> = (0..k).map(|i| var_y * 10f64.powf(-2.0 + 2.5 * i as f64 / (k - 1) as f64)).collect();
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for (i, &b) in b_grid.iter().enumerate() {
        for (j, &e) in e_grid.iter().enumerate() {
            let l = loglik(b, e);
            if l > best.0 {
                best = (l, i, j);
            }
        }
    }
    let (mut b, mut e) = (b_grid[best.1], e_grid[best.2]);
    let mut l = best.0;
    for _ in 0..30 {
        let blo = if best.1 == 0 { 0.0 } else { b_grid[best.1 - 1].min(b * 0.5) };
        let bhi = b_grid.get(best.1 + 1).copied().unwrap_or(b * 2.0).max(b * 1.5 + 1e-12 * var_y);
        let (nb, lb) = golden(|s| loglik(s, e), blo, bhi, 80);
        if lb > l {
            b = nb;
            l = lb;
        }
        // the boundary itself
        let l0 = loglik(0.0, e);
        if l0 >= l {
            b = 0.0;
            l = l0;
        }
        let (ne, le) = golden(|s| loglik(b, s), e * 0.8, e * 1.25, 80);
        if le > l {
            e = ne;
            l = le;
        }
    }
    (b, e, l)
}

pub fn sample_var(y: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (y.len() as f64 - 1.0)
}
