//! Python bindings: datasets, fits, predictions, DDF reports, workflows,
//! benchmarks and the simulation tables.
//!
//! Structured results cross the boundary as plain dicts (via JSON), so the
//! Python side needs no extra packages.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;
use stablab::benchmark::{benchmark_support_probability, ols_reference_crossing, BenchmarkInputs};
use stablab::data::{parse_dataset, Observation, StabilityDataset};
use stablab::ddf::{containment_ddf, ddf_report, residual_ddf, DdfMethod, Target};
use stablab::lmm::{build_design, fit_reml, predict, FitResult, ModelSpec, PredictionKind};
use stablab::rebuild::{rebuild_report, reference_fit};
use stablab::sim::{run_and_write, Output, SimConfig};
use stablab::workflows::{aicc_value, analyze, Method, WorkflowConfig};

fn to_py(e: stablab::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse<T: std::str::FromStr<Err = stablab::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// Stability measurements: one value per (lot, month).
#[pyclass(name = "Dataset", module = "stablab", frozen)]
struct PyDataset {
    inner: StabilityDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (lots, months, values, lsl = 90.0))]
    fn new(lots: Vec<String>, months: Vec<f64>, values: Vec<f64>, lsl: f64) -> PyResult<Self> {
        if lots.len() != months.len() || lots.len() != values.len() {
            return Err(PyValueError::new_err("lots, months and values must have equal length"));
        }
        let rows = lots
            .into_iter()
            .zip(months)
            .zip(values)
            .map(|((lot, month), value)| Observation { lot, month, value })
            .collect();
        Ok(Self {
            inner: StabilityDataset::new(rows, "value", lsl).map_err(to_py)?,
        })
    }

    /// Reads a `lot,month,value` CSV file.
    #[staticmethod]
    #[pyo3(signature = (path, lsl = 90.0))]
    fn from_csv(path: PathBuf, lsl: f64) -> PyResult<Self> {
        let f = std::fs::File::open(&path).map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        Ok(Self {
            inner: parse_dataset(f, lsl).map_err(to_py)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn lots(&self) -> Vec<String> {
        self.inner.lots()
    }

    #[getter]
    fn months(&self) -> Vec<f64> {
        self.inner.months()
    }

    /// `n - rank([X Z])` for `model`.
    #[pyo3(signature = (model = "ri"))]
    fn containment_ddf(&self, model: &str) -> PyResult<usize> {
        containment_ddf(&build_design(&self.inner, parse(model)?)).map_err(to_py)
    }

    /// `n - rank(X)`.
    fn residual_ddf(&self) -> PyResult<usize> {
        residual_ddf(&build_design(&self.inner, ModelSpec::Ols)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, lots={})", self.inner.n(), self.inner.n_lots())
    }
}

/// A bounded-REML fit.
#[pyclass(name = "Fit", module = "stablab", frozen)]
struct PyFit {
    inner: FitResult,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn model(&self) -> &'static str {
        self.inner.spec.label()
    }

    /// `{"sigma2_b0": .., "sigma2_b1": .., "sigma2_e": ..}`.
    #[getter]
    fn theta<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("sigma2_b0", self.inner.theta.sigma2_b0)?;
        d.set_item("sigma2_b1", self.inner.theta.sigma2_b1)?;
        d.set_item("sigma2_e", self.inner.theta.sigma2_e)?;
        Ok(d)
    }

    #[getter]
    fn beta(&self) -> (f64, f64) {
        (self.inner.beta[0], self.inner.beta[1])
    }

    #[getter]
    fn reml_loglik(&self) -> f64 {
        self.inner.reml_loglik
    }

    #[getter]
    fn aicc(&self) -> PyResult<f64> {
        aicc_value(&self.inner).map_err(to_py)
    }

    #[getter]
    fn vcfrac(&self) -> f64 {
        self.inner.theta.vcfrac()
    }

    /// Random components whose estimate is exactly zero.
    #[getter]
    fn boundary(&self) -> Vec<&'static str> {
        self.inner
            .boundary
            .iter()
            .filter(|(_, b)| *b)
            .map(|(c, _)| c.label())
            .collect()
    }

    /// Everything reported by `stablab fit`, as a dict.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &self.inner.summary())
    }

    /// Prediction and confidence limits for one lot (conditional) or the
    /// population mean (`lot=None`, marginal).
    #[pyo3(signature = (month, lot = None, ddf = "contain", alpha = 0.05))]
    fn predict<'py>(&self, py: Python<'py>, month: f64, lot: Option<&str>, ddf: &str, alpha: f64) -> PyResult<Bound<'py, PyAny>> {
        let report = self.ddf(month, lot, ddf)?;
        let kind = if lot.is_some() {
            PredictionKind::Conditional
        } else {
            PredictionKind::Marginal
        };
        let row = predict(&self.inner, lot, month, kind, alpha, report.nu).map_err(to_py)?;
        to_dict(py, &row)
    }

    /// Denominator degrees of freedom with its ingredients.
    #[pyo3(signature = (month, lot = None, method = "sat"))]
    fn ddf_report<'py>(&self, py: Python<'py>, month: f64, lot: Option<&str>, method: &str) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &self.ddf(month, lot, method)?)
    }
}

impl PyFit {
    fn ddf(&self, month: f64, lot: Option<&str>, method: &str) -> PyResult<stablab::ddf::DdfReport> {
        let method: DdfMethod = parse(method)?;
        let target = match lot {
            Some(l) => Target::conditional(self.inner.lot_index(l).map_err(to_py)?, month),
            None => Target::marginal(month),
        };
        ddf_report(&self.inner, &target, method).map_err(to_py)
    }
}

/// Fits `model` (`"ris"`, `"ri"` or `"ols"`) by bounded REML.
#[pyfunction]
#[pyo3(signature = (dataset, model = "ris"))]
fn fit(py: Python<'_>, dataset: &PyDataset, model: &str) -> PyResult<PyFit> {
    let spec: ModelSpec = parse(model)?;
    let ds = &dataset.inner;
    let inner = py.detach(|| fit_reml(&build_design(ds, spec), &ds.values())).map_err(to_py)?;
    Ok(PyFit { inner })
}

/// Runs one analysis workflow and returns its result as a dict.
#[pyfunction]
#[pyo3(signature = (dataset, method, t_star = 48.0, alpha = 0.05))]
fn analyze_workflow<'py>(py: Python<'py>, dataset: &PyDataset, method: &str, t_star: f64, alpha: f64) -> PyResult<Bound<'py, PyAny>> {
    let method: Method = parse(method)?;
    let cfg = WorkflowConfig {
        t_star,
        alpha,
        ..WorkflowConfig::default()
    };
    let ds = &dataset.inner;
    let res = py.detach(|| analyze(ds, method, &cfg)).map_err(to_py)?;
    to_dict(py, &res)
}

/// One-sided Student t quantile.
#[pyfunction]
fn t_quantile(p: f64, df: f64) -> PyResult<f64> {
    stablab::num::t_quantile(p, df).map_err(to_py)
}

/// Known-parameter probability that every lot passes at `t_star`, on the
/// default simulation design.
#[pyfunction]
#[pyo3(signature = (vcfrac, crossing_month = 57.0))]
fn benchmark_probability(vcfrac: f64, crossing_month: f64) -> PyResult<f64> {
    let inputs = BenchmarkInputs::from_sim(&SimConfig::default(), vcfrac, crossing_month);
    Ok(benchmark_support_probability(&inputs).map_err(to_py)?.probability)
}

/// Pooled-regression reference crossing month of the default design.
#[pyfunction]
fn reference_crossing() -> PyResult<f64> {
    ols_reference_crossing(&BenchmarkInputs::from_sim(&SimConfig::default(), 0.0, 57.0)).map_err(to_py)
}

/// Satterthwaite reconstruction rows for the balanced reference design.
#[pyfunction]
#[pyo3(signature = (lot = "G", month = 24.0, alpha = 0.05))]
fn rebuild_reference<'py>(py: Python<'py>, lot: &str, month: f64, alpha: f64) -> PyResult<Bound<'py, PyAny>> {
    let fit = reference_fit().map_err(to_py)?;
    to_dict(py, &rebuild_report(&fit, lot, month, alpha).map_err(to_py)?)
}

/// Runs simulation diagnostics and writes their CSV files to `out_dir`.
/// `config` is a JSON object with any `SimConfig` fields to override.
#[pyfunction]
#[pyo3(signature = (which, out_dir, config = None))]
fn simulate(py: Python<'_>, which: &str, out_dir: PathBuf, config: Option<&str>) -> PyResult<Vec<String>> {
    let which: Output = parse(which)?;
    let cfg: SimConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => SimConfig::default(),
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let paths = py.detach(|| run_and_write(&cfg, which, &out_dir)).map_err(to_py)?;
    Ok(paths.into_iter().map(|p| p.display().to_string()).collect())
}

#[pymodule]
#[pyo3(name = "stablab")]
fn stablab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_workflow, m)?)?;
    m.add_function(wrap_pyfunction!(t_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark_probability, m)?)?;
    m.add_function(wrap_pyfunction!(reference_crossing, m)?)?;
    m.add_function(wrap_pyfunction!(rebuild_reference, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
