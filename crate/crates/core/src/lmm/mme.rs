//! Henderson's mixed-model equations.
//!
//! With `R = sigma2_e I` and diagonal `G`, the equations
//!
//! ```text
//! [X'X   X'Z            ] [beta]   [X'y]
//! [Z'X   Z'Z + s2e G^-1 ] [b   ] = [Z'y]
//! ```
//!
//! are assembled over the random-effect columns whose variance is positive.
//! `C = sigma2_e K^-1` is the inverse coefficient matrix on the `R^-1`
//! scale; columns with zero variance get zero rows and columns in `C` and a
//! zero BLUP, which matches removing them from the model.

use nalgebra::{DMatrix, DVector};

use super::{Design, Theta};
use crate::{Error, Result};

/// Cross-products of a design, reusable across variance components.
#[derive(Debug, Clone)]
pub struct MmeSystem {
    /// `[X Z]' [X Z]`.
    pub gram: DMatrix<f64>,
    p: usize,
    comps: Vec<super::VarComp>,
}

#[derive(Debug, Clone)]
pub struct MmeSolution {
    pub beta: [f64; 2],
    /// BLUPs in `Z` column order.
    pub b: DVector<f64>,
    /// Inverse coefficient matrix over `(beta, b)`, full size.
    pub c: DMatrix<f64>,
}

impl MmeSystem {
    pub fn new(design: &Design) -> Self {
        let xz = design.xz();
        Self {
            gram: xz.transpose() * &xz,
            p: 2,
            comps: design.z_columns.iter().map(|c| c.comp).collect(),
        }
    }

    fn active(&self, theta: &Theta) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.p).collect();
        for (j, c) in self.comps.iter().enumerate() {
            if theta.get(*c) > 0.0 {
                idx.push(self.p + j);
            }
        }
        idx
    }

    fn coefficient(&self, theta: &Theta, idx: &[usize]) -> DMatrix<f64> {
        let k = idx.len();
        let mut m = DMatrix::from_fn(k, k, |a, b| self.gram[(idx[a], idx[b])]);
        for (a, &i) in idx.iter().enumerate() {
            if i >= self.p {
                m[(a, a)] += theta.sigma2_e / theta.get(self.comps[i - self.p]);
            }
        }
        m
    }

    fn factor(&self, theta: &Theta) -> Result<(Vec<usize>, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
        if !(theta.sigma2_e > 0.0) {
            return Err(Error::InvalidArgument("sigma2_e must be positive".into()));
        }
        let idx = self.active(theta);
        let chol = self
            .coefficient(theta, &idx)
            .cholesky()
            .ok_or_else(|| Error::Singular("MME coefficient matrix is not positive definite".into()))?;
        Ok((idx, chol))
    }

    fn expand(&self, idx: &[usize], kinv: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
        let dim = self.gram.nrows();
        let mut c = DMatrix::zeros(dim, dim);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                c[(i, j)] = 0.5 * (kinv[(a, b)] + kinv[(b, a)]) * scale;
            }
        }
        c
    }

    /// Full-size `C` at `theta`.
    pub fn inverse(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        let (idx, chol) = self.factor(theta)?;
        Ok(self.expand(&idx, &chol.inverse(), theta.sigma2_e))
    }
}

/// Solves the mixed-model equations at `theta`.
pub fn mme_solve(theta: &Theta, design: &Design, y: &[f64]) -> Result<MmeSolution> {
    let sys = MmeSystem::new(design);
    let (idx, chol) = sys.factor(theta)?;
    let c = sys.expand(&idx, &chol.inverse(), theta.sigma2_e);
    let xz = design.xz();
    let rhs_full = xz.transpose() * DVector::from_column_slice(y);
    let rhs = DVector::from_iterator(idx.len(), idx.iter().map(|&i| rhs_full[i]));
    let sol = chol.solve(&rhs);
    let mut full = DVector::zeros(rhs_full.len());
    for (a, &i) in idx.iter().enumerate() {
        full[i] = sol[a];
    }
    let q = design.q();
    Ok(MmeSolution {
        beta: [full[0], full[1]],
        b: DVector::from_fn(q, |j, _| full[2 + j]),
        c,
    })
}
