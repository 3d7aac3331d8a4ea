//! Standard Liouvillian `L_λ = L₀ + λI` and its companions on `ℂ^d⊗ℂ^d⊗F`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{dgamma, discretize, field, number_operator, BathGrid, FockBasis, OneBosonVector};
use crate::linalg::spectral_norm;
use crate::model::{d_tau_beta, d_tau_beta_weighted, tau_beta, tau_beta_weighted, ModelSpec};
use crate::operator::{OperatorMatrix, C64};

/// Operators built for one model on one truncation.
#[derive(Clone, Debug)]
pub struct LiouvillianBundle {
    pub l0: OperatorMatrix,
    pub i: OperatorMatrix,
    pub i_ell: OperatorMatrix,
    pub i1: OperatorMatrix,
    pub n: OperatorMatrix,
    pub spec: ModelSpec,
    pub basis: FockBasis,
    pub grid: BathGrid,
}

fn dense_to_sparse(m: &DMatrix<C64>) -> OperatorMatrix {
    OperatorMatrix::from_dense(m)
}

/// `A ⊗ B ⊗ F` in the `(i, j, fock)` ordering.
pub fn embed(a: &OperatorMatrix, b: &OperatorMatrix, f: &OperatorMatrix) -> OperatorMatrix {
    a.kron(b).kron(f)
}

/// `A ⊗ 1 ⊗ 1` for an atomic observable acting on the first factor.
pub fn left_atomic(a: &DMatrix<C64>, basis: &FockBasis) -> OperatorMatrix {
    let d = a.nrows();
    embed(&dense_to_sparse(a), &OperatorMatrix::identity(d), &OperatorMatrix::identity(basis.dim()))
}

fn check_grid(basis: &FockBasis, grid: &BathGrid) -> Result<()> {
    if basis.mode_count() != grid.len() {
        return Err(Error::Invalid(format!(
            "basis has {} modes but the grid has {}",
            basis.mode_count(),
            grid.len()
        )));
    }
    Ok(())
}

/// `L₀ = H_at⊗1⊗1 − 1⊗H_at⊗1 + 1⊗1⊗dΓ(u)`, diagonal.
pub fn build_l0(spec: &ModelSpec, basis: &FockBasis, grid: &BathGrid) -> Result<OperatorMatrix> {
    check_grid(basis, grid)?;
    let e = &spec.atom.energies;
    let d = e.len();
    let lf = dgamma(basis, grid.modes()).diagonal();
    let nf = basis.dim();
    let mut diag = Vec::with_capacity(d * d * nf);
    for ei in e {
        for ej in e {
            diag.extend(lf.iter().map(|l| ei - ej + l.re));
        }
    }
    Ok(OperatorMatrix::from_real_diagonal(&diag))
}

/// Which smearing functions an interaction-type operator uses.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Smearing {
    Plain,
    Derivative,
}

fn smearing_pair(spec: &ModelSpec, alpha: usize, grid: &BathGrid, kind: Smearing) -> Result<(OneBosonVector, OneBosonVector)> {
    let ff = &spec.couplings[alpha].ff;
    let (beta, phi) = (spec.beta, spec.glue_phase());
    let ang = ff.angular_factor;
    match kind {
        Smearing::Plain => Ok((
            discretize(|u| tau_beta(ff, beta, phi, u), grid, ang)?,
            discretize(|u| tau_beta_weighted(ff, beta, phi, u), grid, ang)?,
        )),
        Smearing::Derivative => Ok((
            discretize(|u| d_tau_beta(ff, beta, phi, u, 1), grid, ang)?,
            discretize(|u| d_tau_beta_weighted(ff, beta, phi, u, 1), grid, ang)?,
        )),
    }
}

fn interaction(spec: &ModelSpec, basis: &FockBasis, grid: &BathGrid, kind: Smearing, left_only: bool) -> Result<OperatorMatrix> {
    check_grid(basis, grid)?;
    let d = spec.dim();
    let id = OperatorMatrix::identity(d);
    let terms: Vec<Result<OperatorMatrix>> = (0..spec.couplings.len())
        .into_par_iter()
        .map(|a| {
            let g = &spec.couplings[a].g;
            let (h1, h2) = smearing_pair(spec, a, grid, kind)?;
            let mut op = embed(&dense_to_sparse(g), &id, &field(basis, &h1));
            if !left_only {
                let cg = g.map(|z| z.conj());
                op = op.sub(&embed(&id, &dense_to_sparse(&cg), &field(basis, &h2)));
            }
            Ok(op)
        })
        .collect();
    let n = d * d * basis.dim();
    let mut total = OperatorMatrix::zeros(n, n);
    // fixed summation order keeps assembly bit-reproducible
    for t in terms {
        total = total.add(&t?);
    }
    total.verify_hermitian()
}

/// `I = Σ_α [G_α⊗1⊗φ(τg_α) − 1⊗C G_α C⊗φ(e^{−βu/2}τg_α)]`.
pub fn build_i(spec: &ModelSpec, basis: &FockBasis, grid: &BathGrid) -> Result<OperatorMatrix> {
    interaction(spec, basis, grid, Smearing::Plain, false)
}

/// First summand of `I` only.
pub fn build_i_ell(spec: &ModelSpec, basis: &FockBasis, grid: &BathGrid) -> Result<OperatorMatrix> {
    interaction(spec, basis, grid, Smearing::Plain, true)
}

/// `I` with both smearing functions replaced by their `u`-derivatives.
pub fn build_i1(spec: &ModelSpec, basis: &FockBasis, grid: &BathGrid) -> Result<OperatorMatrix> {
    interaction(spec, basis, grid, Smearing::Derivative, false)
}

/// `1⊗1⊗N`.
pub fn build_n(spec: &ModelSpec, basis: &FockBasis) -> OperatorMatrix {
    let d = spec.dim();
    embed(&OperatorMatrix::identity(d), &OperatorMatrix::identity(d), &number_operator(basis))
}

pub fn assemble(spec: &ModelSpec, basis: &FockBasis, grid: &BathGrid) -> Result<LiouvillianBundle> {
    Ok(LiouvillianBundle {
        l0: build_l0(spec, basis, grid)?,
        i: build_i(spec, basis, grid)?,
        i_ell: build_i_ell(spec, basis, grid)?,
        i1: build_i1(spec, basis, grid)?,
        n: build_n(spec, basis),
        spec: spec.clone(),
        basis: basis.clone(),
        grid: grid.clone(),
    })
}

impl LiouvillianBundle {
    pub fn dim(&self) -> usize {
        self.l0.dim()
    }

    pub fn lambda(&self) -> f64 {
        self.spec.lambda
    }

    /// `L₀ + λI`.
    pub fn l_lambda(&self) -> OperatorMatrix {
        self.l_at(self.spec.lambda)
    }

    /// `L₀ + λ′I` at an arbitrary coupling (λ-independent operators reused).
    pub fn l_at(&self, lambda: f64) -> OperatorMatrix {
        if lambda == 0.0 {
            return self.l0.clone();
        }
        self.l0.add_scaled(&self.i, C64::new(lambda, 0.0))
    }

    /// Same bundle at a different coupling constant.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut b = self.clone();
        b.spec.lambda = lambda;
        b
    }

    /// Index of `φ_i⊗φ_j⊗|f⟩`.
    pub fn index(&self, i: usize, j: usize, f: usize) -> usize {
        (i * self.spec.dim() + j) * self.basis.dim() + f
    }

    /// `A⊗1⊗1`.
    pub fn atomic_observable(&self, a: &DMatrix<C64>) -> OperatorMatrix {
        left_atomic(a, &self.basis)
    }
}

/// `H_λ = H_at⊗1 + 1⊗dΓ(u) + λ Σ_α G_α⊗φ(g_α)` over the positive modes of `grid`.
pub fn build_zero_temperature_hamiltonian(spec: &ModelSpec, basis: &FockBasis, grid: &BathGrid) -> Result<OperatorMatrix> {
    let (modes, weights) = grid.positive_part();
    if basis.mode_count() != modes.len() {
        return Err(Error::Invalid(format!(
            "basis has {} modes but the grid has {} positive modes",
            basis.mode_count(),
            modes.len()
        )));
    }
    let d = spec.dim();
    let hat = OperatorMatrix::from_real_diagonal(&spec.atom.energies);
    let mut h = hat.kron(&OperatorMatrix::identity(basis.dim()));
    h = h.add(&OperatorMatrix::identity(d).kron(&dgamma(basis, &modes)));
    for c in &spec.couplings {
        let coeffs = modes
            .iter()
            .zip(&weights)
            .map(|(&u, &w)| (c.ff.angular_factor * w).sqrt() * c.ff.g(u))
            .collect();
        let phi = field(basis, &OneBosonVector { coeffs });
        h = h.add(&dense_to_sparse(&c.g).kron(&phi).scale_real(spec.lambda));
    }
    h.verify_hermitian()
}

/// Dense limit for [`relative_bound_check`].
pub const RELATIVE_BOUND_LIMIT: usize = 4000;

/// `‖I(N+1)^{−1/2}‖`.
pub fn relative_bound_check(bundle: &LiouvillianBundle) -> Result<f64> {
    relative_norm(&bundle.i, bundle)
}

/// `‖X(N+1)^{−1/2}‖` for any operator on the bundle's space.
pub fn relative_norm(x: &OperatorMatrix, bundle: &LiouvillianBundle) -> Result<f64> {
    if bundle.dim() > RELATIVE_BOUND_LIMIT {
        return Err(Error::Budget {
            what: "dense relative bound".into(),
            dim: bundle.dim(),
            limit: RELATIVE_BOUND_LIMIT,
        });
    }
    let w: Vec<f64> = bundle.n.diagonal().iter().map(|z| 1.0 / (z.re + 1.0).sqrt()).collect();
    let scaled = x.matmul(&OperatorMatrix::from_real_diagonal(&w));
    Ok(spectral_norm(&scaled.to_dense()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::enumerate_basis;
    use crate::model::{pauli, spin_boson, FormFactor};

    fn tiny() -> LiouvillianBundle {
        let spec = spin_boson(1.0, pauli::x(), FormFactor::gaussian(0.5, 1.0, 1.0), 2.0, 0.1).unwrap();
        let grid = BathGrid::uniform(2.0, 2).unwrap();
        let basis = enumerate_basis(2, 1).unwrap();
        assemble(&spec, &basis, &grid).unwrap()
    }

    #[test]
    fn l0_kernel_and_excitations() {
        let b = tiny();
        let l0 = b.l0.diagonal();
        assert_eq!(l0[b.index(0, 0, 0)].re, 0.0);
        assert_eq!(l0[b.index(1, 1, 0)].re, 0.0);
        assert_eq!(l0[b.index(1, 0, 0)].re, 1.0);
        let f = b.basis.index_of(&[0, 1]).unwrap();
        assert_eq!(l0[b.index(0, 0, f)].re, b.grid.modes()[1]);
    }

    #[test]
    fn hermitian_and_deterministic() {
        let a = tiny();
        let b = tiny();
        assert!(a.i.is_hermitian() && a.i1.is_hermitian() && a.i_ell.is_hermitian());
        assert_eq!(a.i, b.i);
        assert_eq!(a.i1, b.i1);
    }

    #[test]
    fn zero_temperature_ground_energy() {
        let spec = spin_boson(1.0, pauli::x(), FormFactor::gaussian(0.5, 1.0, 1.0), 2.0, 0.0).unwrap();
        let grid = BathGrid::uniform(2.0, 4).unwrap();
        let basis = enumerate_basis(2, 2).unwrap();
        let h = build_zero_temperature_hamiltonian(&spec, &basis, &grid).unwrap();
        let (vals, _) = crate::linalg::hermitian_eigen(&h.to_dense());
        assert!(vals[0].abs() < 1e-14);
    }
}
