//! Stability datasets and CSV tables.
//!
//! Input files are long format with the header `lot,month,value`. Output
//! tables write floating-point cells with 17 significant digits so that a
//! written value parses back to the identical `f64`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub lot: String,
    pub month: f64,
    pub value: f64,
}

/// One attribute measured on several lots over time.
///
/// Rows are kept sorted by `(lot, month)`; lot labels sort lexicographically
/// and that order fixes the column order of every design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityDataset {
    rows: Vec<Observation>,
    pub attribute_name: String,
    pub lsl: f64,
}

impl StabilityDataset {
    pub fn new(mut rows: Vec<Observation>, attribute_name: impl Into<String>, lsl: f64) -> Result<Self> {
        for r in &rows {
            if !r.month.is_finite() || r.month < 0.0 {
                return Err(Error::Dataset(format!(
                    "lot {}: month must be finite and >= 0, got {}",
                    r.lot, r.month
                )));
            }
            if !r.value.is_finite() {
                return Err(Error::Dataset(format!(
                    "lot {} month {}: non-finite value",
                    r.lot, r.month
                )));
            }
        }
        rows.sort_by(|a, b| a.lot.cmp(&b.lot).then(a.month.total_cmp(&b.month)));
        for w in rows.windows(2) {
            if w[0].lot == w[1].lot && w[0].month == w[1].month {
                return Err(Error::Dataset(format!(
                    "duplicate observation for lot {} at month {}",
                    w[0].lot, w[0].month
                )));
            }
        }
        let lots: BTreeSet<&str> = rows.iter().map(|r| r.lot.as_str()).collect();
        if lots.len() < 2 {
            return Err(Error::Dataset("fewer than 2 lots".into()));
        }
        let months: BTreeSet<u64> = rows.iter().map(|r| r.month.to_bits()).collect();
        if months.len() < 3 {
            return Err(Error::Dataset("fewer than 3 distinct months".into()));
        }
        Ok(Self {
            rows,
            attribute_name: attribute_name.into(),
            lsl,
        })
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Distinct lot labels in sorted order.
    pub fn lots(&self) -> Vec<String> {
        let mut v: Vec<String> = self.rows.iter().map(|r| r.lot.clone()).collect();
        v.dedup();
        v
    }

    pub fn n_lots(&self) -> usize {
        self.lots().len()
    }

    /// Distinct months in ascending order.
    pub fn months(&self) -> Vec<f64> {
        let mut m: Vec<f64> = self.rows.iter().map(|r| r.month).collect();
        m.sort_by(f64::total_cmp);
        m.dedup();
        m
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.value).collect()
    }

    /// Same design with the response replaced (in row order).
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.rows.len() {
            return Err(Error::InvalidArgument("value count mismatch".into()));
        }
        let mut out = self.clone();
        for (r, v) in out.rows.iter_mut().zip(values) {
            r.value = *v;
        }
        Ok(out)
    }

    /// Rows grouped by lot, in lot order.
    pub fn by_lot(&self) -> BTreeMap<&str, Vec<&Observation>> {
        let mut map: BTreeMap<&str, Vec<&Observation>> = BTreeMap::new();
        for r in &self.rows {
            map.entry(r.lot.as_str()).or_default().push(r);
        }
        map
    }
}

fn parse_f64(field: &str, line: usize, name: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("malformed numeric field {name} = '{field}'"),
    })
}

/// Parses a `lot,month,value` CSV stream.
pub fn parse_dataset<R: Read>(reader: R, lsl: f64) -> Result<StabilityDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols != ["lot", "month", "value"] {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header 'lot,month,value', got '{}'", cols.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        rows.push(Observation {
            lot: rec[0].to_string(),
            month: parse_f64(&rec[1], line, "month")?,
            value: parse_f64(&rec[2], line, "value")?,
        });
    }
    StabilityDataset::new(rows, "value", lsl)
}

pub fn parse_dataset_str(text: &str, lsl: f64) -> Result<StabilityDataset> {
    parse_dataset(text.as_bytes(), lsl)
}

/// A table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Num(f64),
    Int(i64),
    Bool(bool),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}
impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}
impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map(Into::into).unwrap_or(Cell::Empty)
    }
}

/// Formats a float with 17 significant digits (exact round trip).
pub fn format_num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num(v) => format_num(*v),
            Cell::Int(i) => i.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }
}

/// A record type with a fixed column layout.
pub trait TableRecord {
    fn header() -> Vec<&'static str>;
    fn cells(&self) -> Vec<Cell>;
}

/// Writes records as CSV; an empty slice produces a header-only file.
pub fn write_table<T: TableRecord, W: Write>(rows: &[T], sink: W) -> Result<()> {
    let header = T::header();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    w.write_record(&header)?;
    for r in rows {
        let cells = r.cells();
        if cells.len() != header.len() {
            return Err(Error::InvalidArgument(format!(
                "record has {} fields, header has {}",
                cells.len(),
                header.len()
            )));
        }
        w.write_record(cells.iter().map(Cell::render))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV table back as header plus string rows.
pub fn read_table<R: Read>(reader: R) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

impl TableRecord for Observation {
    fn header() -> Vec<&'static str> {
        vec!["lot", "month", "value"]
    }
    fn cells(&self) -> Vec<Cell> {
        vec![self.lot.as_str().into(), self.month.into(), self.value.into()]
    }
}

/// Writes a dataset in the input layout.
pub fn write_dataset<W: Write>(ds: &StabilityDataset, sink: W) -> Result<()> {
    write_table(ds.rows(), sink)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn balanced_csv(lots: usize, months: &[f64]) -> String {
        let mut s = String::from("lot,month,value\n");
        for l in 0..lots {
            for (j, m) in months.iter().enumerate() {
                s.push_str(&format!("L{l:02},{m},{}\n", 100.0 - 0.1 * m + (l * 7 + j) as f64 * 0.01));
            }
        }
        s
    }

    #[test]
    fn balanced_schedule() {
        let ds = parse_dataset_str(&balanced_csv(10, &[0., 3., 6., 9., 12., 24., 36.]), 90.0).unwrap();
        assert_eq!(ds.n(), 70);
        assert_eq!(ds.n_lots(), 10);
        assert_eq!(ds.months().len(), 7);
    }

    #[test]
    fn single_lot_rejected() {
        let err = parse_dataset_str("lot,month,value\nA,0,1\nA,3,1\nA,6,1\n", 0.0).unwrap_err();
        assert!(err.to_string().contains("fewer than 2 lots"));
    }

    #[test]
    fn duplicate_rejected() {
        let txt = "lot,month,value\nLotA,0,1\nLotA,3,1\nLotB,6,1\nLotA,3,2\n";
        let err = parse_dataset_str(txt, 0.0).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn malformed_number_rejected() {
        let txt = "lot,month,value\nA,0,1\nA,x,1\nB,6,1\n";
        assert!(matches!(parse_dataset_str(txt, 0.0), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn negative_month_rejected() {
        let txt = "lot,month,value\nA,0,1\nA,-3,1\nB,6,1\n";
        assert!(parse_dataset_str(txt, 0.0).is_err());
    }

    #[test]
    fn bad_header_rejected() {
        assert!(parse_dataset_str("batch,month,value\nA,0,1\n", 0.0).is_err());
    }

    #[test]
    fn empty_table_is_header_only() {
        let mut buf = Vec::new();
        write_table::<Observation, _>(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "lot,month,value\n");
    }

    #[test]
    fn one_row_one_line() {
        let mut buf = Vec::new();
        let row = Observation { lot: "A".into(), month: 3.0, value: 0.1 };
        write_table(&[row], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }

    fn arb_rows() -> impl Strategy<Value = Vec<Observation>> {
        let lot = prop::sample::select(vec!["A", "B", "C", "lot d"]);
        prop::collection::btree_map(
            (lot, 0u32..60),
            prop::num::f64::NORMAL | prop::num::f64::ZERO,
            6..40,
        )
        .prop_map(|m| {
            m.into_iter()
                .map(|((l, mo), v)| Observation { lot: l.to_string(), month: mo as f64 * 0.5, value: v })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn write_then_parse_is_identity(rows in arb_rows()) {
            if let Ok(ds) = StabilityDataset::new(rows, "value", 90.0) {
                let mut buf = Vec::new();
                write_dataset(&ds, &mut buf).unwrap();
                let back = parse_dataset(buf.as_slice(), 90.0).unwrap();
                prop_assert_eq!(back, ds);
            }
        }

        #[test]
        fn parse_ignores_row_order(rows in arb_rows(), seed in any::<u64>()) {
            if let Ok(ds) = StabilityDataset::new(rows.clone(), "value", 90.0) {
                let mut shuffled = rows;
                // deterministic permutation
                let n = shuffled.len();
                let mut s = seed;
                for i in (1..n).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    shuffled.swap(i, (s >> 33) as usize % (i + 1));
                }
                prop_assert_eq!(StabilityDataset::new(shuffled, "value", 90.0).unwrap(), ds);
            }
        }
    }
}
