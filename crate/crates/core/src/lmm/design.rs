use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::DMatrix;

use super::{ModelSpec, VarComp};
use crate::data::StabilityDataset;

/// One column of `Z`: the lot it belongs to and which effect it carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZColumn {
    pub lot: usize,
    pub comp: VarComp,
}

/// Design matrices for one model on one dataset.
#[derive(Debug, Clone)]
pub struct Design {
    pub spec: ModelSpec,
    /// `n x 2`: intercept and month.
    pub x: DMatrix<f64>,
    /// `n x q` random-effects incidence; empty for pooled regression.
    pub z: DMatrix<f64>,
    pub z_columns: Vec<ZColumn>,
    /// Lot labels in column order.
    pub lots: Vec<String>,
    pub lot_of_row: Vec<usize>,
    pub months: Vec<f64>,
}

impl Design {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    /// `[X Z]`.
    pub fn xz(&self) -> DMatrix<f64> {
        let n = self.n();
        let q = self.q();
        let mut m = DMatrix::zeros(n, 2 + q);
        m.view_mut((0, 0), (n, 2)).copy_from(&self.x);
        if q > 0 {
            m.view_mut((0, 2), (n, q)).copy_from(&self.z);
        }
        m
    }

    /// Index of the `Z` column for `(lot, comp)`.
    pub fn z_column(&self, lot: usize, comp: VarComp) -> Option<usize> {
        self.z_columns.iter().position(|c| c.lot == lot && c.comp == comp)
    }

    /// The same layout for another model.
    pub fn respec(&self, spec: ModelSpec) -> Design {
        assemble(spec, self.lots.clone(), self.lot_of_row.clone(), self.months.clone())
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.spec.hash(&mut h);
        self.lots.hash(&mut h);
        self.lot_of_row.hash(&mut h);
        for m in &self.months {
            m.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Builds `X = (1, month)` and `Z` with lot-indicator columns, followed by
/// lot-specific month columns for the random-slope model.
pub fn build_design(ds: &StabilityDataset, spec: ModelSpec) -> Design {
    let lots = ds.lots();
    let lot_of_row = ds
        .rows()
        .iter()
        .map(|r| lots.binary_search(&r.lot).expect("lot present"))
        .collect();
    let months = ds.rows().iter().map(|r| r.month).collect();
    assemble(spec, lots, lot_of_row, months)
}

fn assemble(spec: ModelSpec, lots: Vec<String>, lot_of_row: Vec<usize>, months: Vec<f64>) -> Design {
    let n = months.len();
    let nl = lots.len();
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { months[i] });
    let mut z_columns = Vec::new();
    for comp in spec.random_components() {
        for lot in 0..nl {
            z_columns.push(ZColumn { lot, comp: *comp });
        }
    }
    let z = DMatrix::from_fn(n, z_columns.len(), |i, j| {
        let c = z_columns[j];
        if lot_of_row[i] != c.lot {
            0.0
        } else if c.comp == VarComp::LotSlope {
            months[i]
        } else {
            1.0
        }
    });
    Design {
        spec,
        x,
        z,
        z_columns,
        lots,
        lot_of_row,
        months,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;

    fn ds() -> StabilityDataset {
        let mut rows = Vec::new();
        for l in 0..10 {
            for m in [0.0, 3.0, 6.0, 9.0, 12.0, 24.0, 36.0] {
                rows.push(Observation { lot: format!("L{l}"), month: m, value: 100.0 - 0.1 * m });
            }
        }
        StabilityDataset::new(rows, "assay", 90.0).unwrap()
    }

    #[test]
    fn ri_indicators() {
        let d = build_design(&ds(), ModelSpec::Ri);
        assert_eq!((d.z.nrows(), d.z.ncols()), (70, 10));
        for i in 0..70 {
            assert_eq!(d.z.row(i).sum(), 1.0);
        }
    }

    #[test]
    fn ris_and_ols_shapes() {
        assert_eq!(build_design(&ds(), ModelSpec::Ris).q(), 20);
        assert_eq!(build_design(&ds(), ModelSpec::Ols).q(), 0);
    }

    #[test]
    fn fingerprint_ignores_response() {
        let a = ds();
        let b = a.with_values(&vec![1.0; 70]).unwrap();
        assert_eq!(
            build_design(&a, ModelSpec::Ri).fingerprint(),
            build_design(&b, ModelSpec::Ri).fingerprint()
        );
        assert_ne!(
            build_design(&a, ModelSpec::Ri).fingerprint(),
            build_design(&a, ModelSpec::Ris).fingerprint()
        );
    }
}
