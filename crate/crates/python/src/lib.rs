//! Python bindings: load a system, dispatch scenarios, fit and query the surrogate.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use sedpce::grid::{batch_solve, solve_model, DispatchModel};
use sedpce::lp::SolverConfig;
use sedpce::scenarios::{synthesize, SynthConfig};
use sedpce::sparse_fit::FitConfig;
use sedpce::uq::{compare_reports, SurrogateModel, UqReport};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A power system with its PTDF matrix, ready to dispatch wind scenarios.
#[pyclass(name = "System", module = "sedpce_py")]
struct PySystem {
    model: DispatchModel,
}

#[pymethods]
impl PySystem {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let system = sedpce::io::load_system(&path).map_err(|e| match e {
            sedpce::io::IoError::Io { .. } => PyIOError::new_err(e.to_string()),
            other => value_err(other),
        })?;
        Ok(Self { model: DispatchModel::new(system).map_err(value_err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let system: sedpce::grid::PowerSystem = serde_json::from_str(text).map_err(value_err)?;
        system.validate().map_err(value_err)?;
        Ok(Self { model: DispatchModel::new(system).map_err(value_err)? })
    }

    #[getter]
    fn periods(&self) -> usize {
        self.model.periods()
    }

    /// Column labels of a scenario row, `w{farm}_t{hour}`.
    #[getter]
    fn scenario_labels(&self) -> Vec<String> {
        self.model.system.scenario_labels()
    }

    /// Rows are lines, columns are buses.
    fn ptdf(&self) -> Vec<Vec<f64>> {
        let p = &self.model.ptdf;
        (0..p.line_ids.len()).map(|l| (0..p.bus_ids.len()).map(|b| p.get(l, b)).collect()).collect()
    }

    /// Dispatch one scenario; returns (cost or None, generation[g][t], flows[l][t]).
    #[allow(clippy::type_complexity)]
    fn solve(&self, wind: Vec<f64>) -> PyResult<(Option<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let s = solve_model(&self.model, &wind, &SolverConfig::default()).map_err(value_err)?;
        Ok((s.cost, s.generation, s.flows))
    }

    /// Optimal cost per scenario row, None where the dispatch failed.
    fn batch_costs(&self, rows: Vec<Vec<f64>>) -> Vec<Option<f64>> {
        batch_solve(&self.model, &rows, &SolverConfig::default())
            .into_iter()
            .map(|r| r.ok().and_then(|o| o.cost))
            .collect()
    }

    /// Draw `n` synthetic multimodal wind scenarios.
    #[pyo3(signature = (n, seed = 0))]
    fn synthesize(&self, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        Ok(synthesize(&self.model.system, n, &SynthConfig::default(), seed).map_err(value_err)?.rows)
    }
}

/// Sparse polynomial surrogate of a scalar response.
#[pyclass(name = "Surrogate", module = "sedpce_py")]
struct PySurrogate {
    model: SurrogateModel,
}

#[pymethods]
impl PySurrogate {
    /// Whiten all `inputs`, then fit on the rows listed in `train` with responses `outputs`.
    #[staticmethod]
    #[pyo3(signature = (inputs, train, outputs, degree_max = 3, variance_keep = 1.0, seed = 0))]
    fn fit(
        inputs: Vec<Vec<f64>>,
        train: Vec<usize>,
        outputs: Vec<f64>,
        degree_max: usize,
        variance_keep: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = FitConfig { degree_max, ..FitConfig::default() };
        let model = SurrogateModel::fit(&inputs, &train, &outputs, &cfg, variance_keep, seed).map_err(value_err)?;
        Ok(Self { model })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let model: SurrogateModel = serde_json::from_str(text).map_err(value_err)?;
        model.validate().map_err(value_err)?;
        Ok(Self { model })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.model).map_err(value_err)
    }

    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.model.predict(&rows).map_err(value_err)
    }

    /// (mean, variance) read off the coefficients.
    fn analytic_moments(&self) -> (f64, f64) {
        self.model.analytic_moments()
    }

    #[getter]
    fn degree(&self) -> usize {
        self.model.expansion.degree
    }

    #[getter]
    fn terms(&self) -> usize {
        self.model.expansion.indices.len()
    }

    #[getter]
    fn loo(&self) -> f64 {
        self.model.expansion.loo
    }
}

/// Mean, spread, KDE density and empirical CDF of a sample.
#[pyclass(name = "Report", module = "sedpce_py")]
struct PyReport {
    report: UqReport,
}

#[pymethods]
impl PyReport {
    #[new]
    fn new(values: Vec<f64>) -> PyResult<Self> {
        Ok(Self { report: UqReport::from_values(&values, 0.0).map_err(value_err)? })
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.report.mean
    }

    #[getter]
    fn std(&self) -> f64 {
        self.report.std
    }

    #[getter]
    fn n(&self) -> usize {
        self.report.n
    }

    fn pdf(&self) -> (Vec<f64>, Vec<f64>) {
        (self.report.pdf.grid.clone(), self.report.pdf.density.clone())
    }

    fn cdf(&self) -> (Vec<f64>, Vec<f64>) {
        (self.report.cdf.grid.clone(), self.report.cdf.prob.clone())
    }

    /// Raise ValueError unless the CDF is monotone and the density integrates to one.
    fn check(&self) -> PyResult<()> {
        self.report.check().map_err(value_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.report).map_err(value_err)
    }
}

/// Percent errors of mean and std plus KS distance of `candidate` against `baseline`.
#[pyfunction]
fn compare(baseline: PyRef<'_, PyReport>, candidate: PyRef<'_, PyReport>) -> PyResult<(f64, f64, f64)> {
    let c = compare_reports(&baseline.report, &candidate.report).map_err(value_err)?;
    Ok((c.mean_error_pct, c.std_error_pct, c.ks_distance))
}

#[pymodule]
fn sedpce_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_class::<PySurrogate>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
