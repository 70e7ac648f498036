//! Python bindings for the STQN toolkit.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use stqn_core::chaos::{kappa_and_limits, tv_bound_m2, LimitSettings};
use stqn_core::models::{check_assumptions, filtered_l1, SpectralDensity, WaveletSpec};
use stqn_core::quad::Tolerance;
use stqn_core::scattering::{ScatterSettings, Scatterer};
use stqn_core::stats::chi2_distances;
use stqn_core::synth::{target_autocov, GridSpec, PathMeta, SampledPath, Synthesizer};

fn err(e: stqn_core::Error) -> PyErr {
    match e {
        stqn_core::Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Round-trip a serializable value into Python objects through the json module.
fn to_py<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

/// Spectral density from a catalog id such as "gauss-lrd:beta=0.5".
#[pyclass(name = "Density", frozen)]
struct PyDensity(SpectralDensity);

#[pymethods]
impl PyDensity {
    #[new]
    fn new(id: &str) -> PyResult<Self> {
        SpectralDensity::from_id(id).map(Self).map_err(err)
    }

    fn __call__(&self, lam: f64) -> f64 {
        self.0.f(lam)
    }

    fn autocov(&self, lags: Vec<f64>, rel_tol: Option<f64>) -> PyResult<Vec<f64>> {
        target_autocov(&self.0, &lags, &Tolerance::new(1e-14, rel_tol.unwrap_or(1e-10))).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Density({:?})", self.0.label)
    }
}

/// Wavelet from a catalog id such as "mexican-hat".
#[pyclass(name = "Wavelet", frozen)]
struct PyWavelet(WaveletSpec);

#[pymethods]
impl PyWavelet {
    #[new]
    fn new(id: &str) -> PyResult<Self> {
        WaveletSpec::from_id(id).map(Self).map_err(err)
    }

    /// Fourier transform value as (re, im).
    fn psi_hat(&self, lam: f64) -> (f64, f64) {
        let v = self.0.psi_hat(lam);
        (v.re, v.im)
    }

    fn __repr__(&self) -> String {
        format!("Wavelet({:?})", self.0.label)
    }
}

/// A sampled path on a uniform grid.
#[pyclass(name = "Path")]
struct PyPath(SampledPath);

#[pymethods]
impl PyPath {
    #[new]
    fn new(values: Vec<f64>, dt: f64) -> PyResult<Self> {
        let meta = PathMeta {
            density: "external".into(),
            method: "python".into(),
        };
        SampledPath::new(values, dt, 0.0, 0, meta).map(Self).map_err(err)
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values.clone()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.0.dt
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyfunction]
fn synthesize(density: &PyDensity, n: usize, dt: f64, seed: u64) -> PyResult<PyPath> {
    let grid = GridSpec::new(n, dt).map_err(err)?;
    Synthesizer::new(&density.0, grid)
        .and_then(|s| s.synthesize(seed))
        .map(PyPath)
        .map_err(err)
}

fn scatterer(w: &PyWavelet, p: &PyPath) -> PyResult<Scatterer> {
    Scatterer::new(&w.0, p.0.grid(), ScatterSettings::default()).map_err(err)
}

/// Signed last-layer output T for the given scales.
#[pyfunction]
fn t_transform(path: &PyPath, wavelet: &PyWavelet, scales: Vec<i32>) -> PyResult<PyPath> {
    scatterer(wavelet, path)?.t_transform(&path.0, &scales).map(PyPath).map_err(err)
}

/// The STQN cascade U = |T|^2 for the given scales.
#[pyfunction]
#[pyo3(name = "stqn")]
fn stqn_cascade(path: &PyPath, wavelet: &PyWavelet, scales: Vec<i32>) -> PyResult<PyPath> {
    scatterer(wavelet, path)?.stqn_cascade(&path.0, &scales).map(PyPath).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (density, wavelet, j, rel_tol=1e-10))]
fn first_layer_mean(density: &PyDensity, wavelet: &PyWavelet, j: i32, rel_tol: f64) -> PyResult<f64> {
    filtered_l1(&density.0, &wavelet.0, j, &Tolerance::new(1e-300, rel_tol)).map_err(err)
}

#[pyfunction]
fn assumptions(py: Python<'_>, density: &PyDensity, wavelet: &PyWavelet) -> PyResult<Py<PyAny>> {
    to_py(py, &check_assumptions(&density.0, &wavelet.0))
}

/// Limit constants (c-constants, kappa, limit variance) as a dict.
#[pyfunction]
#[pyo3(signature = (density, wavelet, scales_prefix, depth, rel_tol=1e-3, seed=0))]
fn limits(
    py: Python<'_>,
    density: &PyDensity,
    wavelet: &PyWavelet,
    scales_prefix: Vec<i32>,
    depth: usize,
    rel_tol: f64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let settings = LimitSettings {
        rel_tol,
        seed,
        ..LimitSettings::default()
    };
    let lc = py
        .detach(|| kappa_and_limits(&density.0, &wavelet.0, &scales_prefix, depth, &settings))
        .map_err(err)?;
    to_py(py, &lc)
}

/// Depth-2 total-variation bound at scales (j1, j2) as (value, error).
#[pyfunction]
fn tv_bound(py: Python<'_>, density: &PyDensity, wavelet: &PyWavelet, j1: i32, j2: i32) -> PyResult<(f64, f64)> {
    let b = py.detach(|| tv_bound_m2(&density.0, &wavelet.0, j1, j2)).map_err(err)?;
    Ok((b.value, b.err))
}

/// KS and W1 distances of samples to chi-square(1) with bootstrap SEs.
#[pyfunction]
#[pyo3(signature = (samples, resamples=500, seed=0))]
fn chi2_distance(py: Python<'_>, samples: Vec<f64>, resamples: usize, seed: u64) -> PyResult<Py<PyAny>> {
    to_py(py, &chi2_distances(&samples, resamples, seed).map_err(err)?)
}

#[pymodule(name = "stqn")]
fn stqn_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDensity>()?;
    m.add_class::<PyWavelet>()?;
    m.add_class::<PyPath>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(t_transform, m)?)?;
    m.add_function(wrap_pyfunction!(stqn_cascade, m)?)?;
    m.add_function(wrap_pyfunction!(first_layer_mean, m)?)?;
    m.add_function(wrap_pyfunction!(assumptions, m)?)?;
    m.add_function(wrap_pyfunction!(limits, m)?)?;
    m.add_function(wrap_pyfunction!(tv_bound, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_distance, m)?)?;
    Ok(())
}
