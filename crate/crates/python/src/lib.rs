//! Python bindings: models, waiting-time tables, Fisher information,
//! trajectory simulation and the linear estimator.

use num_complex::Complex64;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use wtd_fisher::estimator::{self, GainTables};
use wtd_fisher::fisher::{self as fi, FisherReport, ObserverMask};
use wtd_fisher::lindblad::{self, GridSpec, WtdTable};
use wtd_fisher::model::{self as mo, LambdaParams, OpenSystemModel, ParameterizedModel, TwoLevelParams};
use wtd_fisher::trajectory::{self, DetectionRecord};
use wtd_fisher::Error;

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else if matches!(e, Error::Io(_)) {
        PyOSError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn mask(s: &str) -> PyResult<ObserverMask> {
    s.parse().map_err(py_err)
}

fn grid_spec(tau_max: Option<f64>, n_bins: Option<usize>) -> GridSpec {
    GridSpec { tau_max, n_bins, ..GridSpec::auto() }
}

fn rows(m: &wtd_fisher::linalg::CMatrix) -> Vec<Vec<Complex64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// A Markovian emitter with detected and undetected jump channels.
#[pyclass(name = "Model", frozen)]
struct PyModel(OpenSystemModel);

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (omega, delta=0.0, gamma=1.0, eta=1.0))]
    fn two_level(omega: f64, delta: f64, gamma: f64, eta: f64) -> PyResult<Self> {
        mo::build_two_level(omega, delta, gamma, eta).map(PyModel).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (omega0, omega1, delta0=0.0, delta1=0.0, gamma0=1.0, gamma1=1.0, gamma_deph=0.0, eta0=1.0, eta1=1.0))]
    #[allow(clippy::too_many_arguments)]
    fn lambda_system(
        omega0: f64,
        omega1: f64,
        delta0: f64,
        delta1: f64,
        gamma0: f64,
        gamma1: f64,
        gamma_deph: f64,
        eta0: f64,
        eta1: f64,
    ) -> PyResult<Self> {
        mo::build_lambda_system(omega0, omega1, delta0, delta1, gamma0, gamma1, gamma_deph, eta0, eta1)
            .map(PyModel)
            .map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn channel_count(&self) -> usize {
        self.0.channel_count()
    }

    #[getter]
    fn efficiencies(&self) -> Vec<f64> {
        self.0.efficiencies()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.0.detected().iter().map(|c| c.label().to_string()).collect()
    }

    #[getter]
    fn hamiltonian(&self) -> Vec<Vec<Complex64>> {
        rows(self.0.hamiltonian())
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.0.fingerprint()
    }

    fn with_efficiencies(&self, etas: Vec<f64>) -> PyResult<Self> {
        self.0.with_efficiencies(&etas).map(PyModel).map_err(py_err)
    }

    /// Steady-state density matrix.
    fn steady_state(&self) -> PyResult<Vec<Vec<Complex64>>> {
        lindblad::steady_state(&self.0).map(|r| rows(r.matrix())).map_err(py_err)
    }

    /// Detected click rate per channel in the steady state.
    fn rates(&self) -> PyResult<Vec<f64>> {
        let rho = lindblad::steady_state(&self.0).map_err(py_err)?;
        Ok(lindblad::detected_rates(&self.0, &rho))
    }

    #[pyo3(signature = (tau_max=None, n_bins=None))]
    fn waiting_times(&self, tau_max: Option<f64>, n_bins: Option<usize>) -> PyResult<PyWtdTable> {
        lindblad::waiting_time_distributions(&self.0, &grid_spec(tau_max, n_bins))
            .map(PyWtdTable)
            .map_err(py_err)
    }

    /// `(mean_rate, tau_mean, tau_var, fano_inverse)` for channel `m` alone.
    fn count_stats(&self, m: usize) -> PyResult<(f64, f64, f64, f64)> {
        let s = lindblad::channel_count_stats(&self.0, m, &GridSpec::moments()).map_err(py_err)?;
        Ok((s.mean_rate, s.tau_mean, s.tau_var, s.fano_inverse))
    }

    /// Click record as a list of `(time, channel)`.
    #[pyo3(signature = (duration, seed=1, stream=0))]
    fn simulate(&self, duration: f64, seed: u64, stream: u64) -> PyResult<Vec<(f64, usize)>> {
        let dt = trajectory::default_time_step(&self.0);
        let r = trajectory::simulate_record_with(&self.0, duration, seed, stream, dt).map_err(py_err)?;
        Ok(r.events.iter().map(|e| (e.t, e.channel)).collect())
    }

    fn __repr__(&self) -> String {
        format!("Model(dim={}, channels={:?})", self.0.dim(), self.labels())
    }
}

/// Waiting-time distributions `w_{mm'}(τ)` on a uniform grid.
#[pyclass(name = "WtdTable", frozen)]
struct PyWtdTable(WtdTable);

#[pymethods]
impl PyWtdTable {
    #[getter]
    fn tau_max(&self) -> f64 {
        self.0.grid().tau_max
    }

    #[getter]
    fn n_bins(&self) -> usize {
        self.0.grid().n_bins
    }

    #[getter]
    fn centers(&self) -> Vec<f64> {
        self.0.grid().centers().collect()
    }

    #[getter]
    fn channel_rates(&self) -> Vec<f64> {
        self.0.channel_rates().to_vec()
    }

    fn row(&self, m: usize, mp: usize) -> PyResult<Vec<f64>> {
        let mc = self.0.channel_count();
        if m >= mc || mp >= mc {
            return Err(PyValueError::new_err(format!("channel index out of range 0..{mc}")));
        }
        Ok(self.0.row(m, mp).to_vec())
    }

    fn normalization(&self, m: usize) -> f64 {
        self.0.normalization(m)
    }

    fn write_csv(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.0.write_csv(&path, None).map_err(py_err)
    }
}

/// A model family indexed by one scalar parameter θ.
#[pyclass(name = "Family", frozen)]
struct PyFamily(ParameterizedModel);

#[pymethods]
impl PyFamily {
    /// Family from a TOML model configuration.
    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        wtd_fisher::config::load_model(text).map(PyFamily).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (parameter, theta0, omega, delta=0.0, gamma=1.0, eta=1.0))]
    fn two_level(parameter: &str, theta0: f64, omega: f64, delta: f64, gamma: f64, eta: f64) -> PyResult<Self> {
        TwoLevelParams { omega, delta, gamma, eta }.sweep(parameter, theta0).map(PyFamily).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (parameter, theta0, omega0, omega1, delta0=0.0, delta1=0.0, gamma0=1.0, gamma1=1.0, gamma_deph=0.0, eta0=1.0, eta1=1.0))]
    #[allow(clippy::too_many_arguments)]
    fn lambda_system(
        parameter: &str,
        theta0: f64,
        omega0: f64,
        omega1: f64,
        delta0: f64,
        delta1: f64,
        gamma0: f64,
        gamma1: f64,
        gamma_deph: f64,
        eta0: f64,
        eta1: f64,
    ) -> PyResult<Self> {
        LambdaParams { omega0, omega1, delta0, delta1, gamma0, gamma1, gamma_deph, eta0, eta1 }
            .sweep(parameter, theta0)
            .map(PyFamily)
            .map_err(py_err)
    }

    #[getter]
    fn parameter(&self) -> String {
        self.0.parameter().to_string()
    }

    #[getter]
    fn theta0(&self) -> f64 {
        self.0.theta0()
    }

    #[pyo3(signature = (theta=None))]
    fn model(&self, theta: Option<f64>) -> PyResult<PyModel> {
        self.0.build(theta.unwrap_or(self.0.theta0())).map(PyModel).map_err(py_err)
    }

    /// Fisher information per unit time at `theta` (default θ0).
    #[pyo3(signature = (theta=None, mask="all", tau_max=None, n_bins=None))]
    fn fisher(&self, theta: Option<f64>, mask: &str, tau_max: Option<f64>, n_bins: Option<usize>) -> PyResult<PyFisher> {
        let theta = theta.unwrap_or(self.0.theta0());
        fi::fisher_total_at(&self.0, theta, &grid_spec(tau_max, n_bins), &self::mask(mask)?)
            .map(PyFisher)
            .map_err(py_err)
    }

    /// Total-count sensitivity at θ0.
    fn total_count_sensitivity(&self) -> PyResult<f64> {
        fi::total_count_sensitivity(&self.0).map_err(py_err)
    }

    /// `f_total_per_time` at each θ; `None` where the model is not ergodic.
    #[pyo3(signature = (thetas, mask="all"))]
    fn sweep(&self, thetas: Vec<f64>, mask: &str) -> PyResult<Vec<Option<f64>>> {
        let pts = fi::sweep(&self.0, &GridSpec::auto(), &self::mask(mask)?, &thetas).map_err(py_err)?;
        Ok(pts.into_iter().map(|p| p.result.ok().map(|r| r.f_total_per_time)).collect())
    }

    /// Estimator gains at θ0 for records of length `duration`.
    #[pyo3(signature = (duration, mask="all"))]
    fn gains(&self, duration: f64, mask: &str) -> PyResult<PyGains> {
        estimator::build_gains(&self.0, &GridSpec::auto(), duration, &self::mask(mask)?)
            .map(PyGains)
            .map_err(py_err)
    }
}

#[pyclass(name = "FisherReport", frozen)]
struct PyFisher(FisherReport);

#[pymethods]
impl PyFisher {
    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta
    }

    #[getter]
    fn f_poisson(&self) -> f64 {
        self.0.f_poisson_per_time
    }

    #[getter]
    fn f_count(&self) -> f64 {
        self.0.f_count_per_time
    }

    #[getter]
    fn f_total(&self) -> f64 {
        self.0.f_total_per_time
    }

    #[getter]
    fn crb(&self) -> f64 {
        self.0.crb_variance_time_product
    }

    #[getter]
    fn total_count_sensitivity(&self) -> f64 {
        self.0.total_count_sensitivity
    }

    #[getter]
    fn rates(&self) -> Vec<f64> {
        self.0.per_channel.iter().map(|c| c.rate).collect()
    }

    #[getter]
    fn fano_inverse(&self) -> Vec<Option<f64>> {
        self.0.per_channel.iter().map(|c| c.fano_inverse).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "FisherReport(theta={}, f_total={:.6e}, f_poisson={:.6e}, f_count={:.6e})",
            self.0.theta, self.0.f_total_per_time, self.0.f_poisson_per_time, self.0.f_count_per_time
        )
    }
}

#[pyclass(name = "Gains", frozen)]
struct PyGains(GainTables);

#[pymethods]
impl PyGains {
    #[getter]
    fn duration(&self) -> f64 {
        self.0.duration
    }

    #[getter]
    fn fisher_total(&self) -> f64 {
        self.0.fisher_total
    }

    #[getter]
    fn validity_range(&self) -> f64 {
        self.0.validity_range
    }

    /// `θ̂ − θ0` from a click record of `(time, channel)` pairs.
    fn estimate(&self, events: Vec<(f64, usize)>) -> PyResult<f64> {
        let channels = self.0.channels;
        if let Some(&(_, m)) = events.iter().find(|e| e.1 >= channels) {
            return Err(PyValueError::new_err(format!("channel {m} out of range 0..{channels}")));
        }
        let record = DetectionRecord {
            events: events.iter().map(|&(t, channel)| trajectory::Detection { t, channel }).collect(),
            duration: self.0.duration,
            seed: 0,
            stream: 0,
            channels,
            model_fingerprint: String::new(),
        };
        estimator::estimate(&self.0, &trajectory::sort_intervals(&record, self.0.grid)).map_err(py_err)
    }

    fn write_csv(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.0.write_csv(&path).map_err(py_err)
    }

    #[staticmethod]
    fn read_csv(path: std::path::PathBuf) -> PyResult<Self> {
        GainTables::read_csv(&path).map(PyGains).map_err(py_err)
    }
}

#[pymodule(name = "wtd_fisher")]
fn wtd_fisher_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyWtdTable>()?;
    m.add_class::<PyFamily>()?;
    m.add_class::<PyFisher>()?;
    m.add_class::<PyGains>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
