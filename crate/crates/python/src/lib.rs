//! Python bindings for the `twinbeam` library.

use nalgebra::Matrix4;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use twinbeam::analysis::{self, AnalysisConfig, TransmissionChoice};
use twinbeam::estimation::{self, ReconstructionConfig};
use twinbeam::gaussian::{self, CovMat4, SqueezeSpec, StandardFormParams};
use twinbeam::homodyne::DetectionSpec;
use twinbeam::{optics, replicate, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn matrix(rows: [[f64; 4]; 4]) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| rows[i][j])
}

fn rows(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

/// Two-mode covariance matrix in (Xa, Ya, Xb, Yb) order, shot noise 0.5.
#[pyclass(name = "CovMat", frozen, from_py_object)]
#[derive(Clone)]
struct PyCovMat(CovMat4);

#[pymethods]
impl PyCovMat {
    #[new]
    #[pyo3(signature = (entries, errors=None))]
    fn new(entries: [[f64; 4]; 4], errors: Option<[[f64; 4]; 4]>) -> PyResult<Self> {
        let mut cm = CovMat4::new(matrix(entries)).map_err(py_err)?;
        if let Some(e) = errors {
            cm = cm.with_errors(matrix(e)).map_err(py_err)?;
        }
        Ok(PyCovMat(cm))
    }

    #[staticmethod]
    fn vacuum() -> Self {
        PyCovMat(CovMat4::vacuum())
    }

    #[staticmethod]
    fn tmsv(r: f64) -> PyResult<Self> {
        Ok(PyCovMat(gaussian::tmsv_cm(SqueezeSpec::new(r).map_err(py_err)?)))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text)
            .map(PyCovMat)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.0)
    }

    #[getter]
    fn entries(&self) -> [[f64; 4]; 4] {
        rows(self.0.entries())
    }

    #[getter]
    fn errors(&self) -> Option<[[f64; 4]; 4]> {
        self.0.errors().map(rows)
    }

    fn purity(&self) -> PyResult<f64> {
        gaussian::purity(&self.0).map_err(py_err)
    }

    fn symplectic_eigenvalues(&self) -> (f64, f64) {
        gaussian::symplectic_eigenvalues(&self.0)
    }

    #[pyo3(signature = (tol=gaussian::PHYSICAL_TOL))]
    fn is_physical(&self, tol: f64) -> bool {
        self.0.is_physical(tol)
    }

    fn loss(&self, t: f64) -> PyResult<Self> {
        gaussian::loss_channel(&self.0, t).map(PyCovMat).map_err(py_err)
    }

    fn invert_loss(&self, t: f64) -> PyResult<Self> {
        gaussian::invert_loss(&self.0, t).map(PyCovMat).map_err(py_err)
    }

    fn standard_form(&self) -> PyResult<PyStandardForm> {
        gaussian::standard_form(&self.0).map(PyStandardForm).map_err(py_err)
    }

    fn max_abs_diff(&self, other: &PyCovMat) -> f64 {
        self.0.max_abs_diff(&other.0)
    }

    fn __repr__(&self) -> String {
        format!("CovMat({:?})", rows(self.0.entries()))
    }
}

/// `(m, n, c1, c2)` with one-sigma uncertainties.
#[pyclass(name = "StandardForm", frozen, from_py_object)]
#[derive(Clone)]
struct PyStandardForm(StandardFormParams);

#[pymethods]
impl PyStandardForm {
    #[new]
    #[pyo3(signature = (m, n, c1, c2, uncertainties=[0.0; 4]))]
    fn new(m: f64, n: f64, c1: f64, c2: f64, uncertainties: [f64; 4]) -> PyResult<Self> {
        StandardFormParams::with_uncertainties(m, n, c1, c2, uncertainties)
            .map(PyStandardForm)
            .map_err(py_err)
    }

    #[getter]
    fn values(&self) -> [f64; 4] {
        self.0.values()
    }

    #[getter]
    fn uncertainties(&self) -> [f64; 4] {
        self.0.uncertainties()
    }

    fn phs(&self) -> f64 {
        analysis::phs_lhs(&self.0)
    }

    fn duan(&self) -> f64 {
        analysis::duan_lhs(&self.0).0
    }

    fn symmetrize(&self) -> PyResult<PyCovMat> {
        analysis::symmetrize(&self.0).map(PyCovMat).map_err(py_err)
    }

    fn to_cm(&self) -> PyCovMat {
        PyCovMat(self.0.to_cm())
    }

    fn __repr__(&self) -> String {
        let [m, n, c1, c2] = self.0.values();
        format!("StandardForm(m={m}, n={n}, c1={c1}, c2={c2})")
    }
}

/// Full analysis of `cm`; returns the report as JSON. `transmission=None`
/// uses the auxiliary-mode estimate derived from the symmetrised matrix.
#[pyfunction]
#[pyo3(signature = (cm, draws=100_000, seed=1, transmission=Some(0.53)))]
fn analyze(cm: &PyCovMat, draws: usize, seed: u64, transmission: Option<f64>) -> PyResult<String> {
    let cfg = AnalysisConfig {
        draws,
        seed,
        transmission: transmission.map_or(TransmissionChoice::Auto, TransmissionChoice::Fixed),
        ..AnalysisConfig::default()
    };
    to_json(&analysis::analyze(&cm.0, None, &cfg).map_err(py_err)?)
}

/// Simulates the six homodyne traces of a two-mode squeezed vacuum and
/// reconstructs the covariance matrix; returns the reconstruction as JSON.
#[pyfunction]
#[pyo3(signature = (r, samples=1_000_000, seed=1, efficiency=None, visibility=None))]
fn simulate_and_reconstruct(
    r: f64,
    samples: usize,
    seed: u64,
    efficiency: Option<f64>,
    visibility: Option<f64>,
) -> PyResult<String> {
    let base = DetectionSpec::default();
    let det = DetectionSpec {
        efficiency: efficiency.unwrap_or(base.efficiency),
        visibility: visibility.unwrap_or(base.visibility),
        samples_per_trace: samples,
        seed,
        ..base
    };
    let set = replicate::simulate_set(r, &det).map_err(py_err)?;
    to_json(&estimation::reconstruct(&set, &ReconstructionConfig::default()).map_err(py_err)?)
}

/// Transmission explaining a single-mode block with variances `v_min`, `v_max`
/// as a lossy pure squeezed state.
#[pyfunction]
fn transmission_from_variances(v_min: f64, v_max: f64) -> PyResult<f64> {
    analysis::transmission_from_variances(v_min, v_max).map_err(py_err)
}

#[pyfunction]
fn modes_table() -> PyResult<String> {
    optics::modes_table().map_err(py_err)
}

#[pyfunction]
fn reference_measured_cm() -> PyCovMat {
    PyCovMat(replicate::reference_measured_cm())
}

#[pymodule]
#[pyo3(name = "twinbeam")]
fn twinbeam_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCovMat>()?;
    m.add_class::<PyStandardForm>()?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_and_reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(transmission_from_variances, m)?)?;
    m.add_function(wrap_pyfunction!(modes_table, m)?)?;
    m.add_function(wrap_pyfunction!(reference_measured_cm, m)?)?;
    Ok(())
}
