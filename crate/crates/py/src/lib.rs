//! Python bindings: a spin-boson model handle, the imaginary-time oracles and
//! the config-driven experiment runner.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use thermofield_core::cli::{run, RunConfig};
use thermofield_core::dyson::{brute_force_correlation, wick_expectation, FiniteVolumeModel};
use thermofield_core::fock::{enumerate_basis, BathGrid};
use thermofield_core::kms::{interacting_kms_vector, kernel_residual, projection_distance, reference_vector};
use thermofield_core::liouvillian::assemble;
use thermofield_core::model::{c_p_beta, fgr_value, validate_a1, FormFactor, ModelSpec};
use thermofield_core::spectral::gamma0_matrix;
use thermofield_core::{Error, C64};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Invalid(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Two-level atom with gap `gap` coupled through `g` to a Gaussian form factor.
#[pyclass(name = "SpinBoson", frozen)]
struct PySpinBoson {
    spec: ModelSpec,
}

#[pymethods]
impl PySpinBoson {
    #[new]
    #[pyo3(signature = (g, p, beta, coupling, gap=1.0, amplitude=1.0, cutoff=2.0))]
    fn new(g: Vec<Vec<f64>>, p: f64, beta: f64, coupling: f64, gap: f64, amplitude: f64, cutoff: f64) -> PyResult<Self> {
        if g.len() != 2 || g.iter().any(|r| r.len() != 2) {
            return Err(PyValueError::new_err("g must be a 2x2 matrix"));
        }
        let gm = DMatrix::from_fn(2, 2, |i, j| C64::new(g[i][j], 0.0));
        let spec = thermofield_core::model::spin_boson(gap, gm, FormFactor::gaussian(p, amplitude, cutoff), beta, coupling)
            .map_err(py_err)?;
        Ok(Self { spec })
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.spec.beta
    }

    #[getter]
    fn coupling(&self) -> f64 {
        self.spec.lambda
    }

    fn validate(&self) -> bool {
        validate_a1(&self.spec).passed
    }

    fn fgr_value(&self) -> f64 {
        fgr_value(&self.spec)
    }

    fn c_p_beta(&self) -> PyResult<f64> {
        c_p_beta(&self.spec).map_err(py_err)
    }

    /// `(gap, explicit_bound)` of the level-shift matrix.
    fn level_shift_gap(&self) -> PyResult<(f64, f64)> {
        let g = gamma0_matrix(&self.spec).map_err(py_err)?;
        Ok((g.gap, g.explicit_bound))
    }

    /// Kernel residual, overlap distance and `⟨N⟩` of the interacting KMS vector.
    #[pyo3(signature = (u_max, modes, n_max))]
    fn kms(&self, u_max: f64, modes: usize, n_max: usize) -> PyResult<BTreeMap<String, f64>> {
        let grid = BathGrid::uniform(u_max, modes).map_err(py_err)?;
        let basis = enumerate_basis(grid.len(), n_max).map_err(py_err)?;
        let b = assemble(&self.spec, &basis, &grid).map_err(py_err)?;
        let psi = interacting_kms_vector(&b).map_err(py_err)?;
        let omega0 = reference_vector(&self.spec, &b.basis);
        let nn = psi.norm() * psi.norm();
        Ok(BTreeMap::from([
            ("dim".to_string(), b.dim() as f64),
            ("kernel_residual".to_string(), kernel_residual(&b, &psi)),
            ("overlap_distance".to_string(), projection_distance(&psi, &omega0)),
            ("n_expectation".to_string(), psi.expectation(&b.n) / nn),
        ]))
    }
}

/// Imaginary-time correlation of a single mode via Wick pairings.
#[pyfunction]
fn wick_single_mode(energy: f64, beta: f64, times: Vec<f64>) -> PyResult<f64> {
    let fv = FiniteVolumeModel::single_mode(energy, 1.0, beta);
    wick_expectation(&fv, &vec![0; times.len()], &times).map_err(py_err)
}

/// Same correlation from a truncated Gibbs trace.
#[pyfunction]
#[pyo3(signature = (energy, beta, times, n_max=40))]
fn brute_force_single_mode(energy: f64, beta: f64, times: Vec<f64>, n_max: usize) -> PyResult<f64> {
    let fv = FiniteVolumeModel::single_mode(energy, 1.0, beta);
    brute_force_correlation(&fv, &vec![0; times.len()], &times, n_max).map_err(py_err)
}

/// Runs a TOML config; returns `(status, summary, files)`.
#[pyfunction]
#[pyo3(signature = (toml_text, overrides=Vec::new()))]
fn run_config(py: Python<'_>, toml_text: &str, overrides: Vec<String>) -> PyResult<(i32, String, Vec<String>)> {
    let cfg = RunConfig::from_toml_with_overrides(toml_text, &overrides).map_err(py_err)?;
    let out = py.detach(|| run(&cfg)).map_err(py_err)?;
    Ok((out.status, out.summary, out.files.iter().map(|p| p.display().to_string()).collect()))
}

#[pymodule]
fn thermofield(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PySpinBoson>()?;
    m.add_function(wrap_pyfunction!(wick_single_mode, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_single_mode, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
