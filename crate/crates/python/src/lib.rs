//! Python bindings. States cross the boundary as lists of Python complex
//! numbers (kets) or nested lists (density matrices, row-major).

use nalgebra::DMatrix;
use num_complex::Complex64;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sicpovm::loopsim::{self, PORTS};
use sicpovm::qltp::{self, NoiseModel};
use sicpovm::reconstruct::{self as rec, Method};
use sicpovm::sic::{self, SicPovm};
use sicpovm::state::{self, Ket, ProbabilityVector};
use sicpovm::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn ket(amps: Vec<Complex64>) -> PyResult<Ket> {
    Ket::normalized(amps).map_err(py_err)
}

fn rows(m: &DMatrix<Complex64>) -> Vec<Vec<Complex64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn povm_for(dim: usize) -> PyResult<SicPovm> {
    SicPovm::standard(dim).map_err(py_err)
}

fn parse_method(name: &str) -> PyResult<Method> {
    match name {
        "norm" | "normalization" => Ok(Method::Normalization),
        "fit" | "model_fit" => Ok(Method::ModelFit),
        _ => Err(PyValueError::new_err(format!("unknown method `{name}`; use \"norm\" or \"fit\""))),
    }
}

/// Density matrix with unit trace, Hermitian and positive semidefinite.
#[pyclass(name = "DensityMatrix", module = "sicpovm", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDensityMatrix {
    inner: state::DensityMatrix,
}

#[pymethods]
impl PyDensityMatrix {
    #[new]
    fn new(matrix: Vec<Vec<Complex64>>) -> PyResult<Self> {
        let d = matrix.len();
        if matrix.iter().any(|r| r.len() != d) {
            return Err(PyValueError::new_err("density matrix must be square"));
        }
        let flat: Vec<Complex64> = matrix.into_iter().flatten().collect();
        let inner = state::DensityMatrix::new(DMatrix::from_row_slice(d, d, &flat)).map_err(py_err)?;
        Ok(PyDensityMatrix { inner })
    }

    /// |ψ⟩⟨ψ| for the normalized version of `amplitudes`.
    #[staticmethod]
    fn pure(amplitudes: Vec<Complex64>) -> PyResult<Self> {
        Ok(PyDensityMatrix { inner: state::DensityMatrix::pure(&ket(amplitudes)?) })
    }

    #[staticmethod]
    fn maximally_mixed(dim: usize) -> Self {
        PyDensityMatrix { inner: state::DensityMatrix::maximally_mixed(dim) }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn matrix(&self) -> Vec<Vec<Complex64>> {
        rows(self.inner.matrix())
    }

    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues()
    }

    fn purity(&self) -> f64 {
        self.inner.purity()
    }

    fn __repr__(&self) -> String {
        format!("DensityMatrix(dim={}, purity={:.6})", self.inner.dim(), self.inner.purity())
    }
}

/// Storage-loop apparatus parameters.
#[pyclass(name = "LoopConfig", module = "sicpovm", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct PyLoopConfig {
    epsilon_v: f64,
    epsilon_h: f64,
    visibilities: [f64; 3],
    per_pass_loss: f64,
    hwp_sigma_deg: f64,
    seed: u64,
}

impl PyLoopConfig {
    fn to_core(&self) -> PyResult<loopsim::LoopConfig> {
        let cfg = loopsim::LoopConfig {
            epsilon_v: self.epsilon_v,
            epsilon_h: self.epsilon_h,
            visibilities: self.visibilities,
            per_pass_loss: self.per_pass_loss,
            hwp_sigma_deg: self.hwp_sigma_deg,
            seed: self.seed,
            ..loopsim::LoopConfig::experimental()
        };
        cfg.validate().map_err(py_err)?;
        Ok(cfg)
    }

    fn from_core(c: &loopsim::LoopConfig) -> Self {
        PyLoopConfig {
            epsilon_v: c.epsilon_v,
            epsilon_h: c.epsilon_h,
            visibilities: c.visibilities,
            per_pass_loss: c.per_pass_loss,
            hwp_sigma_deg: c.hwp_sigma_deg,
            seed: c.seed,
        }
    }
}

#[pymethods]
impl PyLoopConfig {
    /// Defaults to the reported apparatus; keyword arguments override fields.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = PyLoopConfig::from_core(&loopsim::LoopConfig::experimental());
        if let Some(kwargs) = kwargs {
            for (k, v) in kwargs.iter() {
                let key: String = k.extract()?;
                match key.as_str() {
                    "epsilon_v" => cfg.epsilon_v = v.extract()?,
                    "epsilon_h" => cfg.epsilon_h = v.extract()?,
                    "visibilities" => cfg.visibilities = v.extract()?,
                    "per_pass_loss" => cfg.per_pass_loss = v.extract()?,
                    "hwp_sigma_deg" => cfg.hwp_sigma_deg = v.extract()?,
                    "seed" => cfg.seed = v.extract()?,
                    _ => return Err(PyValueError::new_err(format!("unknown config key `{key}`"))),
                }
            }
        }
        cfg.to_core()?;
        Ok(cfg)
    }

    #[staticmethod]
    fn experimental() -> Self {
        PyLoopConfig::from_core(&loopsim::LoopConfig::experimental())
    }

    #[staticmethod]
    fn ideal(epsilon_v: f64) -> Self {
        PyLoopConfig::from_core(&loopsim::LoopConfig::ideal(epsilon_v))
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyLoopConfig::from_core(&loopsim::LoopConfig::parse(text, "<string>").map_err(py_err)?))
    }

    fn to_text(&self) -> PyResult<String> {
        Ok(self.to_core()?.to_text())
    }

    fn __repr__(&self) -> String {
        format!(
            "LoopConfig(epsilon_v={}, epsilon_h={}, visibilities={:?}, per_pass_loss={}, hwp_sigma_deg={}, seed={})",
            self.epsilon_v, self.epsilon_h, self.visibilities, self.per_pass_loss, self.hwp_sigma_deg, self.seed
        )
    }
}

/// Overlap and completeness check of the stored fiducial's orbit.
#[pyfunction]
#[pyo3(signature = (dim, tol = 1e-12))]
fn sic_verify(py: Python<'_>, dim: usize, tol: f64) -> PyResult<Bound<'_, PyDict>> {
    let check = sic::verify_sic(&povm_for(dim)?, tol);
    let out = PyDict::new(py);
    out.set_item("max_overlap_deviation", check.max_overlap_deviation)?;
    out.set_item("completeness_residual", check.completeness_residual)?;
    out.set_item("passed", check.passed)?;
    Ok(out)
}

/// The SIC kets of the stored fiducial in loop order, with their (m, n) labels.
#[pyfunction]
fn sic_elements(dim: usize) -> PyResult<Vec<((usize, usize), Vec<Complex64>)>> {
    let povm = povm_for(dim)?;
    Ok(povm.ordered().map(|(l, k)| ((l.m, l.n), k.amplitudes().iter().copied().collect())).collect())
}

/// Multi-start search for a fiducial; returns a dict with the fiducial
/// amplitudes, residual, restarts used and convergence flag.
#[pyfunction]
#[pyo3(signature = (dim, seed, restarts = 100, tol = 1e-9))]
fn find_fiducial(py: Python<'_>, dim: usize, seed: u64, restarts: usize, tol: f64) -> PyResult<Bound<'_, PyDict>> {
    let report = py.detach(|| sic::find_fiducial(dim, seed, restarts, tol)).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("fiducial", report.fiducial.ket().amplitudes().iter().copied().collect::<Vec<_>>())?;
    out.set_item("residual", report.residual)?;
    out.set_item("restarts_used", report.restarts_used)?;
    out.set_item("converged", report.converged)?;
    Ok(out)
}

#[pyfunction]
fn born_probability(rho: &PyDensityMatrix, outcome: Vec<Complex64>) -> PyResult<f64> {
    state::born_probability(&rho.inner, &ket(outcome)?).map_err(py_err)
}

#[pyfunction]
fn fidelity(rho: &PyDensityMatrix, sigma: &PyDensityMatrix) -> PyResult<f64> {
    state::fidelity(&rho.inner, &sigma.inner).map_err(py_err)
}

/// SIC probabilities in loop order.
#[pyfunction]
fn sic_probabilities(rho: &PyDensityMatrix) -> PyResult<Vec<f64>> {
    let povm = povm_for(rho.inner.dim())?;
    Ok(sic::sic_probabilities(&rho.inner, &povm).map_err(py_err)?.values().to_vec())
}

/// The Hermitian, trace-one operator with the given SIC probabilities.
#[pyfunction]
fn linear_inversion(p: Vec<f64>) -> PyResult<Vec<Vec<Complex64>>> {
    let d = (p.len() as f64).sqrt().round() as usize;
    let povm = povm_for(d)?;
    let p = ProbabilityVector::new(p).map_err(py_err)?;
    Ok(rows(rec::linear_inversion(&p, &povm).map_err(py_err)?.matrix()))
}

#[pyfunction]
fn nearest_density_matrix(matrix: Vec<Vec<Complex64>>) -> PyResult<PyDensityMatrix> {
    let d = matrix.len();
    let flat: Vec<Complex64> = matrix.into_iter().flatten().collect();
    if flat.len() != d * d {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    let h = state::Operator::new(DMatrix::from_row_slice(d, d, &flat)).map_err(py_err)?;
    Ok(PyDensityMatrix { inner: state::nearest_density_matrix(&h).map_err(py_err)? })
}

/// Whether `p` is the SIC distribution of a physical state, and the minimum
/// eigenvalue of its linear inversion.
#[pyfunction]
fn validate_sic_distribution(p: Vec<f64>) -> PyResult<(bool, f64)> {
    let d = (p.len() as f64).sqrt().round() as usize;
    let povm = povm_for(d)?;
    let v = rec::validate_sic_distribution(&ProbabilityVector::new(p).map_err(py_err)?, &povm).map_err(py_err)?;
    Ok((v.valid, v.min_eigenvalue))
}

/// Port probabilities after `cycles` passes through the loop.
#[pyfunction]
#[pyo3(signature = (rho, config, cycles = 1))]
fn simulate<'py>(
    py: Python<'py>,
    rho: &PyDensityMatrix,
    config: &PyLoopConfig,
    cycles: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.to_core()?;
    let res = loopsim::simulate_recycled(&rho.inner, &cfg, cycles).map_err(py_err)?;
    let out = PyDict::new(py);
    let labels: Vec<(usize, usize)> = res.ports.iter().map(|p| (p.label.m, p.label.n)).collect();
    out.set_item("labels", labels)?;
    out.set_item("ports", res.port_probabilities())?;
    out.set_item("lost", res.lost)?;
    out.set_item("residual", res.residual_in_loop)?;
    Ok(out)
}

/// Mean and spread of the port probabilities under random plate errors.
#[pyfunction]
fn monte_carlo_systematics<'py>(
    py: Python<'py>,
    rho: &PyDensityMatrix,
    config: &PyLoopConfig,
    samples: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.to_core()?;
    let inner = rho.inner.clone();
    let rep = py.detach(|| loopsim::monte_carlo_systematics(&inner, &cfg, samples)).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("nominal", rep.nominal)?;
    out.set_item("mean", rep.mean)?;
    out.set_item("std_dev", rep.std_dev)?;
    Ok(out)
}

/// One multinomial draw of `total` counts over the given port probabilities.
#[pyfunction]
fn sample_counts(probabilities: Vec<f64>, total: i64, seed: u64) -> PyResult<Vec<u64>> {
    loopsim::sample_counts(&probabilities, total, seed).map_err(py_err)
}

/// Corrected SIC probabilities and state from nine port counts.
#[pyfunction]
#[pyo3(signature = (counts, config, method = "norm", seed = 0, replicates = 500))]
fn reconstruct<'py>(
    py: Python<'py>,
    counts: Vec<u64>,
    config: &PyLoopConfig,
    method: &str,
    seed: u64,
    replicates: usize,
) -> PyResult<Bound<'py, PyDict>> {
    if counts.len() != PORTS {
        return Err(PyValueError::new_err(format!("expected {PORTS} port counts, got {}", counts.len())));
    }
    let cfg = config.to_core()?;
    let method = parse_method(method)?;
    let r = py.detach(|| rec::reconstruct(&counts, &cfg, method, replicates, seed)).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("method", r.method.name())?;
    out.set_item("p", r.p.values().to_vec())?;
    out.set_item("rho", Py::new(py, PyDensityMatrix { inner: r.rho })?)?;
    out.set_item("stat_err", r.stat_err)?;
    out.set_item("valid", r.validity.valid)?;
    out.set_item("min_eigenvalue", r.validity.min_eigenvalue)?;
    Ok(out)
}

/// (d+1) Σ_i p_i |⟨B_j|ψ_i⟩|² − 1 for each outcome B_j.
#[pyfunction]
fn qltp_predict(p: Vec<f64>, outcomes: Vec<Vec<Complex64>>) -> PyResult<Vec<f64>> {
    let d = (p.len() as f64).sqrt().round() as usize;
    let povm = povm_for(d)?;
    let kets = outcomes.into_iter().map(ket).collect::<PyResult<Vec<_>>>()?;
    let cm = qltp::conditional_matrix(&povm, &kets).map_err(py_err)?;
    let p = ProbabilityVector::new(p).map_err(py_err)?;
    (0..kets.len()).map(|j| qltp::qltp_predict(&p, &cm, j).map_err(py_err)).collect()
}

/// Predicted versus direct probability of `outcome`. Exact unless count
/// totals are given, in which case counts are simulated on `config`.
#[pyfunction]
#[pyo3(signature = (rho, outcome, sic_total = None, pvm_total = None, config = None, seed = None, method = "norm"))]
fn compare_with_direct<'py>(
    py: Python<'py>,
    rho: &PyDensityMatrix,
    outcome: Vec<Complex64>,
    sic_total: Option<u64>,
    pvm_total: Option<u64>,
    config: Option<&PyLoopConfig>,
    seed: Option<u64>,
    method: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let b = ket(outcome)?;
    let povm = povm_for(rho.inner.dim())?;
    let noise = match (sic_total, pvm_total, seed) {
        (None, None, None) => None,
        (Some(sic), Some(pvm), Some(seed)) => {
            let cfg = match config {
                Some(c) => c.to_core()?,
                None => loopsim::LoopConfig::experimental(),
            };
            Some(NoiseModel {
                sic_total: sic,
                pvm_total: pvm,
                config: loopsim::LoopConfig { seed, ..cfg },
                method: parse_method(method)?,
                ..NoiseModel::experimental(seed)
            })
        }
        _ => return Err(PyValueError::new_err("noisy mode needs sic_total, pvm_total and seed")),
    };
    let inner = rho.inner.clone();
    let r = py.detach(|| qltp::compare_with_direct(&inner, &b, &povm, noise.as_ref())).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("predicted", r.predicted)?;
    out.set_item("direct", r.direct)?;
    out.set_item("stat", r.stat.to_vec())?;
    out.set_item("sys", r.sys.to_vec())?;
    Ok(out)
}

#[pymodule]
#[pyo3(name = "sicpovm")]
fn sicpovm_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDensityMatrix>()?;
    m.add_class::<PyLoopConfig>()?;
    m.add_function(wrap_pyfunction!(sic_verify, m)?)?;
    m.add_function(wrap_pyfunction!(sic_elements, m)?)?;
    m.add_function(wrap_pyfunction!(find_fiducial, m)?)?;
    m.add_function(wrap_pyfunction!(born_probability, m)?)?;
    m.add_function(wrap_pyfunction!(fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(sic_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(linear_inversion, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_density_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(validate_sic_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_systematics, m)?)?;
    m.add_function(wrap_pyfunction!(sample_counts, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(qltp_predict, m)?)?;
    m.add_function(wrap_pyfunction!(compare_with_direct, m)?)?;
    Ok(())
}
