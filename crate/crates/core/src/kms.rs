//! Reference and interacting KMS vectors and their separation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{enumerate_basis, BathGrid, FockBasis};
use crate::krylov::{lanczos_expm, taylor_expm, KrylovOptions};
use crate::liouvillian::{assemble, LiouvillianBundle};
use crate::model::{gibbs_vector, ModelSpec};
use crate::operator::{inner, norm, OperatorMatrix, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    coeffs: Vec<C64>,
    norm: f64,
}

impl StateVector {
    pub fn new(coeffs: Vec<C64>) -> Self {
        let norm = norm(&coeffs);
        Self { coeffs, norm }
    }

    pub fn normalized(coeffs: Vec<C64>) -> Result<Self> {
        let n = norm(&coeffs);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Numerical(format!("cannot normalize a vector of norm {n}")));
        }
        Ok(Self::new(coeffs.into_iter().map(|x| x / n).collect()))
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<C64> {
        self.coeffs
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        inner(&self.coeffs, &other.coeffs)
    }

    /// `⟨ψ, Aψ⟩` (real part; callers pass Hermitian operators).
    pub fn expectation(&self, a: &OperatorMatrix) -> f64 {
        a.expectation(&self.coeffs).re
    }
}

/// One `(β, λ)` point of an overlap experiment.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRecord {
    pub beta: f64,
    pub lambda: f64,
    pub overlap_distance: f64,
    pub kernel_residual: f64,
    pub n_expectation: f64,
    pub extras: BTreeMap<String, f64>,
}

/// `Ω_β^at ⊗ Ω`.
pub fn reference_vector(spec: &ModelSpec, basis: &FockBasis) -> StateVector {
    let g = gibbs_vector(&spec.atom, spec.beta);
    let nf = basis.dim();
    let mut v = vec![C64::new(0.0, 0.0); g.len() * nf];
    for (k, &c) in g.iter().enumerate() {
        v[k * nf] = c;
    }
    StateVector::new(v)
}

/// How `e^{−β(L₀+λI_ℓ)/2}` is applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KmsMethod {
    /// Taylor stepping when `β|ℓ_min|/2` is large, Lanczos otherwise.
    Auto,
    Lanczos { max_dim: usize },
    Taylor { order: usize },
}

/// Above this exponent the Lanczos projection loses the small components.
const AUTO_SWITCH: f64 = 15.0;

pub const KMS_TOL: f64 = 1e-10;

/// `Z⁻¹ e^{−β(L₀+λI_ℓ)/2} Ω_{β,0}` with the phase fixed so that the overlap
/// with `Ω_{β,0}` is real and non-negative.
pub fn interacting_kms_vector(bundle: &LiouvillianBundle) -> Result<StateVector> {
    interacting_kms_vector_with(bundle, KmsMethod::Auto)
}

pub fn interacting_kms_vector_with(bundle: &LiouvillianBundle, method: KmsMethod) -> Result<StateVector> {
    let omega0 = reference_vector(&bundle.spec, &bundle.basis);
    let lambda = bundle.spec.lambda;
    if lambda == 0.0 {
        return Ok(omega0);
    }
    let k = bundle.l0.add_scaled(&bundle.i_ell, C64::new(lambda, 0.0));
    let s = -bundle.spec.beta / 2.0;
    let method = match method {
        KmsMethod::Auto => {
            let lmin = bundle.l0.diagonal().iter().map(|z| z.re).fold(0.0, f64::min);
            if (bundle.spec.beta / 2.0) * (-lmin) > AUTO_SWITCH {
                KmsMethod::Taylor { order: 24 }
            } else {
                KmsMethod::Lanczos { max_dim: 40 }
            }
        }
        m => m,
    };
    let out = match method {
        KmsMethod::Lanczos { max_dim } => {
            let opts = KrylovOptions {
                max_dim,
                tol: KMS_TOL,
                ..Default::default()
            };
            lanczos_expm(&k, C64::new(s, 0.0), omega0.coeffs(), opts, true)?
        }
        KmsMethod::Taylor { order } => taylor_expm(&k, s, omega0.coeffs(), order)?,
        KmsMethod::Auto => unreachable!(),
    };
    let mut v = out.vector;
    let ov = inner(&v, omega0.coeffs());
    if ov.norm() > 0.0 {
        let ph = ov / ov.norm();
        for x in &mut v {
            *x *= ph;
        }
    }
    StateVector::normalized(v)
}

/// `‖L_λ ψ‖`.
pub fn kernel_residual(bundle: &LiouvillianBundle, psi: &StateVector) -> f64 {
    norm(&bundle.l_lambda().matvec(psi.coeffs()))
}

/// `‖P_ψ − P_χ‖ = √(1 − |⟨ψ,χ⟩|²)` for unit vectors.
pub fn projection_distance(psi: &StateVector, chi: &StateVector) -> f64 {
    let ov = psi.inner(chi).norm() / (psi.norm() * chi.norm());
    (1.0 - ov * ov).max(0.0).sqrt()
}

/// Both sides of the overlap decomposition, term by term.
#[derive(Clone, Debug, Serialize)]
pub struct OverlapDecomposition {
    pub lhs: f64,
    pub q_left: f64,
    pub q_right: f64,
    pub atomic_term: f64,
    pub n_term: f64,
    pub rhs: f64,
}

/// `lhs = ‖P_ψ − P_{Ω_{β,0}}‖²`,
/// `rhs = 2⟨Q⊗1⊗1⟩ + 2⟨1⊗Q⊗1⟩ + 2‖P_{Ω_β^at} − P_{φ₀⊗φ₀}‖ + 2⟨N⟩`, `Q = 1 − P_{φ₀}`.
pub fn overlap_decomposition_check(bundle: &LiouvillianBundle, psi: &StateVector) -> OverlapDecomposition {
    let spec = &bundle.spec;
    let d = spec.dim();
    let nf = bundle.basis.dim();
    let omega0 = reference_vector(spec, &bundle.basis);
    let dist = projection_distance(psi, &omega0);
    let (mut q_left, mut q_right) = (0.0, 0.0);
    let nrm2 = psi.norm() * psi.norm();
    for i in 0..d {
        for j in 0..d {
            let block = &psi.coeffs()[(i * d + j) * nf..(i * d + j + 1) * nf];
            let w: f64 = block.iter().map(|z| z.norm_sqr()).sum::<f64>() / nrm2;
            if i != 0 {
                q_left += w;
            }
            if j != 0 {
                q_right += w;
            }
        }
    }
    let g = gibbs_vector(&spec.atom, spec.beta);
    let ov = g[0].norm();
    let atomic = (1.0 - ov * ov).max(0.0).sqrt();
    let n_term = psi.expectation(&bundle.n) / nrm2;
    OverlapDecomposition {
        lhs: dist * dist,
        q_left,
        q_right,
        atomic_term: atomic,
        n_term,
        rhs: 2.0 * q_left + 2.0 * q_right + 2.0 * atomic + 2.0 * n_term,
    }
}

/// Discretization used at every sweep point.
#[derive(Clone, Debug)]
pub struct SweepSetup {
    pub grid: BathGrid,
    pub n_total_max: usize,
}

fn sweep_point(bundle: &LiouvillianBundle, lambda: f64, omega0: &StateVector) -> Result<SweepRecord> {
    let b = bundle.with_lambda(lambda);
    let psi = interacting_kms_vector(&b)?;
    let dec = overlap_decomposition_check(&b, &psi);
    let mut extras = BTreeMap::new();
    extras.insert("overlap_rhs".into(), dec.rhs);
    extras.insert("q_left".into(), dec.q_left);
    Ok(SweepRecord {
        beta: b.spec.beta,
        lambda,
        overlap_distance: projection_distance(&psi, omega0),
        kernel_residual: kernel_residual(&b, &psi),
        n_expectation: dec.n_term,
        extras,
    })
}

fn failed(beta: f64, lambda: f64, e: &Error) -> SweepRecord {
    let mut extras = BTreeMap::new();
    extras.insert("failed".into(), 1.0);
    extras.insert("exit_code".into(), e.exit_code() as f64);
    SweepRecord {
        beta,
        lambda,
        overlap_distance: f64::NAN,
        kernel_residual: f64::NAN,
        n_expectation: f64::NAN,
        extras,
    }
}

/// One record per `(β, λ)` in row-major `(β, λ)` order. Failed points are
/// marked with `extras["failed"] = 1` and the sweep continues.
pub fn overlap_sweep(template: &ModelSpec, setup: &SweepSetup, betas: &[f64], lambdas: &[f64]) -> Vec<SweepRecord> {
    let basis = match enumerate_basis(setup.grid.len(), setup.n_total_max) {
        Ok(b) => b,
        Err(e) => {
            return betas
                .iter()
                .flat_map(|&b| lambdas.iter().map(move |&l| (b, l)))
                .map(|(b, l)| failed(b, l, &e))
                .collect()
        }
    };
    betas
        .par_iter()
        .flat_map_iter(|&beta| {
            let spec = template.with_beta(beta);
            let bundle = assemble(&spec, &basis, &setup.grid);
            let omega0 = reference_vector(&spec, &basis);
            lambdas
                .iter()
                .map(|&lambda| match &bundle {
                    Ok(b) => sweep_point(b, lambda, &omega0).unwrap_or_else(|e| failed(beta, lambda, &e)),
                    Err(e) => failed(beta, lambda, e),
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::enumerate_basis;
    use crate::model::{pauli, spin_boson, FormFactor};

    fn bundle(lambda: f64) -> LiouvillianBundle {
        let spec = spin_boson(1.0, pauli::x(), FormFactor::gaussian(0.5, 1.0, 1.0), 2.0, lambda).unwrap();
        let grid = BathGrid::uniform(2.0, 4).unwrap();
        let basis = enumerate_basis(4, 2).unwrap();
        assemble(&spec, &basis, &grid).unwrap()
    }

    #[test]
    fn reference_vector_in_kernel() {
        let b = bundle(0.0);
        let r = reference_vector(&b.spec, &b.basis);
        assert!((r.norm() - 1.0).abs() < 1e-15);
        assert_eq!(kernel_residual(&b, &r), 0.0);
        assert_eq!(r.expectation(&b.n), 0.0);
    }

    #[test]
    fn lambda_zero_is_reference() {
        let b = bundle(0.0);
        let k = interacting_kms_vector(&b).unwrap();
        assert_eq!(k, reference_vector(&b.spec, &b.basis));
    }

    #[test]
    fn distances() {
        let e = |k: usize| {
            let mut v = vec![C64::new(0.0, 0.0); 3];
            v[k] = C64::new(1.0, 0.0);
            StateVector::new(v)
        };
        assert_eq!(projection_distance(&e(0), &e(0)), 0.0);
        assert_eq!(projection_distance(&e(0), &e(1)), 1.0);
        let mix = StateVector::new(vec![C64::new(0.6, 0.0), C64::new(0.8, 0.0), C64::new(0.0, 0.0)]);
        assert!((projection_distance(&mix, &e(0)) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn methods_agree() {
        let b = bundle(0.1);
        let l = interacting_kms_vector_with(&b, KmsMethod::Lanczos { max_dim: 30 }).unwrap();
        let t = interacting_kms_vector_with(&b, KmsMethod::Taylor { order: 24 }).unwrap();
        assert!(projection_distance(&l, &t) < 1e-9);
    }
}
