//! Eigenanalysis of `L_λ` near zero, the level-shift operator and the
//! positive-commutator machinery.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kms::{interacting_kms_vector, StateVector};
use crate::krylov::minres;
use crate::linalg::{hermitian_eigen, min_singular_value};
use crate::fock::{enumerate_basis, BathGrid};
use crate::liouvillian::{build_i, build_l0, build_n, LiouvillianBundle};
use crate::model::{c_p_beta, fgr_value, gibbs_weights, ModelSpec};
use crate::operator::{axpy, inner, norm, OperatorMatrix, C64};

/// Largest dimension handled by full diagonalization.
pub const DENSE_EIGEN_LIMIT: usize = 2000;

#[derive(Clone, Debug, Serialize)]
pub struct PCParameters {
    pub theta: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Feshbach spectral parameter.
    pub m: f64,
    pub nu: f64,
    pub e: f64,
    pub t: f64,
}

#[derive(Clone, Debug)]
pub struct EigenResult {
    /// Sorted by absolute value.
    pub eigenvalues: Vec<f64>,
    pub vectors: Vec<StateVector>,
    pub residuals: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EigenSolver {
    /// Dense up to [`DENSE_EIGEN_LIMIT`], shift-invert Lanczos above.
    Auto,
    Dense,
    ShiftInvert { shift: f64 },
}

fn residual(l: &OperatorMatrix, v: &[C64], ev: f64) -> f64 {
    let mut r = l.matvec(v);
    axpy(C64::new(-ev, 0.0), v, &mut r);
    norm(&r)
}

/// The `count` eigenpairs of Hermitian `l` closest to 0.
pub fn low_spectrum(l: &OperatorMatrix, count: usize, tol: f64) -> Result<EigenResult> {
    low_spectrum_with(l, count, tol, EigenSolver::Auto)
}

pub fn low_spectrum_with(l: &OperatorMatrix, count: usize, tol: f64, solver: EigenSolver) -> Result<EigenResult> {
    if l.rows() != l.cols() {
        return Err(Error::Invalid("low_spectrum needs a square operator".into()));
    }
    if l.hermiticity_residual() > 1e-10 {
        return Err(Error::Invalid("low_spectrum needs a Hermitian operator".into()));
    }
    let count = count.min(l.dim());
    match solver {
        EigenSolver::Dense => dense_low(l, count, tol),
        EigenSolver::ShiftInvert { shift } => shift_invert(l, count, tol, shift),
        EigenSolver::Auto if l.dim() <= DENSE_EIGEN_LIMIT => dense_low(l, count, tol),
        // a shift off zero keeps the inner solves away from the exact kernel
        EigenSolver::Auto => shift_invert(l, count, tol, -1e-3),
    }
}

fn dense_low(l: &OperatorMatrix, count: usize, tol: f64) -> Result<EigenResult> {
    let (vals, vecs) = hermitian_eigen(&l.to_dense());
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[a].abs().total_cmp(&vals[b].abs()));
    let mut out = EigenResult {
        eigenvalues: Vec::new(),
        vectors: Vec::new(),
        residuals: Vec::new(),
    };
    for &k in order.iter().take(count) {
        let v: Vec<C64> = vecs.column(k).iter().copied().collect();
        let r = residual(l, &v, vals[k]);
        if r > tol {
            return Err(Error::Convergence {
                what: format!("dense eigenpair {k} (value {:.3e})", vals[k]),
                achieved: r,
                target: tol,
            });
        }
        out.eigenvalues.push(vals[k]);
        out.vectors.push(StateVector::new(v));
        out.residuals.push(r);
    }
    Ok(out)
}

fn shift_invert(l: &OperatorMatrix, count: usize, tol: f64, shift: f64) -> Result<EigenResult> {
    let n = l.dim();
    let inner_tol = 1e-14;
    let max_inner = 20 * n.max(100);
    let mut trace = Vec::new();
    let mut krylov = (2 * count + 20).min(n);
    loop {
        // deterministic start vector with support on every component
        let mut q: Vec<C64> = (0..n).map(|k| C64::new(1.0 + 0.1 * ((k as f64) * 0.7).sin(), 0.0)).collect();
        crate::operator::normalize(&mut q);
        let mut basis: Vec<Vec<C64>> = vec![q];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        for j in 0..krylov {
            let (mut w, rel, _) = minres(l, shift, &basis[j], inner_tol, max_inner);
            if rel > 1e-8 {
                return Err(Error::Convergence {
                    what: format!("inner solve at Krylov step {j}; trace {trace:?}"),
                    achieved: rel,
                    target: 1e-8,
                });
            }
            alpha.push(inner(&basis[j], &w).re);
            for _ in 0..2 {
                for v in &basis {
                    let c = inner(v, &w);
                    axpy(-c, v, &mut w);
                }
            }
            let b = norm(&w);
            if j + 1 == krylov || b < 1e-12 {
                break;
            }
            w.iter_mut().for_each(|x| *x /= b);
            beta.push(b);
            basis.push(w);
        }
        let k = alpha.len();
        let mut t = DMatrix::<C64>::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = C64::new(alpha[i], 0.0);
            if i + 1 < k {
                t[(i, i + 1)] = C64::new(beta[i], 0.0);
                t[(i + 1, i)] = C64::new(beta[i], 0.0);
            }
        }
        let (theta, y) = hermitian_eigen(&t);
        let mut pairs: Vec<(f64, Vec<C64>)> = Vec::new();
        for (c, &th) in theta.iter().enumerate() {
            if th.abs() < 1e-300 {
                continue;
            }
            let mut v = vec![C64::new(0.0, 0.0); n];
            for (r, b) in basis.iter().take(k).enumerate() {
                axpy(y[(r, c)], b, &mut v);
            }
            crate::operator::normalize(&mut v);
            let ev = l.expectation(&v).re;
            pairs.push((ev, v));
        }
        pairs.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
        pairs.truncate(count);
        let res: Vec<f64> = pairs.iter().map(|(e, v)| residual(l, v, *e)).collect();
        let worst = res.iter().copied().fold(0.0, f64::max);
        trace.push((krylov, worst));
        if pairs.len() == count && worst <= tol {
            return Ok(EigenResult {
                eigenvalues: pairs.iter().map(|p| p.0).collect(),
                vectors: pairs.into_iter().map(|p| StateVector::new(p.1)).collect(),
                residuals: res,
            });
        }
        if krylov == n || krylov >= 400 {
            return Err(Error::Convergence {
                what: format!("shift-invert Lanczos (Krylov size, worst residual): {trace:?}"),
                achieved: worst,
                target: tol,
            });
        }
        krylov = (2 * krylov).min(n).min(400);
    }
}

/// Indices of `φ_j⊗φ_j⊗Ω`.
pub fn pi_indices(bundle: &LiouvillianBundle) -> Vec<usize> {
    (0..bundle.spec.dim()).map(|j| bundle.index(j, j, 0)).collect()
}

/// `Π = P₀⊗P_Ω`, the projection onto `span{φ_j⊗φ_j⊗Ω}`.
pub fn pi_projection(bundle: &LiouvillianBundle) -> OperatorMatrix {
    let n = bundle.dim();
    let trip = pi_indices(bundle).into_iter().map(|k| (k, k, C64::new(1.0, 0.0))).collect();
    OperatorMatrix::from_triplets(n, n, trip)
}

/// `Π I ε/(L₀²+ε²) I Π` in the basis `φ_j⊗φ_j⊗Ω`.
pub fn regularized_lso(bundle: &LiouvillianBundle, epsilon: f64) -> Result<DMatrix<C64>> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let l0 = bundle.l0.diagonal();
    let idx = pi_indices(bundle);
    let n = bundle.dim();
    let cols: Vec<Vec<C64>> = idx
        .iter()
        .map(|&k| {
            let mut e = vec![C64::new(0.0, 0.0); n];
            e[k] = C64::new(1.0, 0.0);
            bundle.i.matvec(&e)
        })
        .collect();
    let d = idx.len();
    let mut m = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            let mut s = C64::new(0.0, 0.0);
            for r in 0..n {
                let (x, y) = (cols[a][r], cols[b][r]);
                if x.norm_sqr() == 0.0 || y.norm_sqr() == 0.0 {
                    continue;
                }
                let l = l0[r].re;
                s += x.conj() * y * (epsilon / (l * l + epsilon * epsilon));
            }
            m[(a, b)] = s;
        }
    }
    Ok(m)
}

/// Level-shift operator on `Ran Π` with its gap.
#[derive(Clone, Debug, Serialize)]
pub struct Gamma0 {
    /// Real symmetric, indexed by atomic level.
    pub matrix: Vec<Vec<f64>>,
    pub gap: f64,
    /// `min (E_m−E_n)² tr e^{−βH}/|e^{−βE_m}−e^{−βE_n}|·angular·|Σ G g|²`.
    pub explicit_bound: f64,
    pub fgr: f64,
    /// Set when the transition weight vanishes.
    pub warning: Option<String>,
}

impl Gamma0 {
    pub fn dense(&self) -> DMatrix<f64> {
        let d = self.matrix.len();
        DMatrix::from_fn(d, d, |i, j| self.matrix[i][j])
    }
}

fn transition_weight(spec: &ModelSpec, m: usize, n: usize) -> Result<f64> {
    let e = &spec.atom.energies;
    let u = e[n] - e[m];
    let mut s = C64::new(0.0, 0.0);
    let mut ang = 4.0 * PI;
    for (a, c) in spec.couplings.iter().enumerate() {
        s += c.g[(m, n)] * spec.tau(a, u)?;
        ang = c.ff.angular_factor;
    }
    Ok(PI * ang / 2.0 * s.norm_sqr())
}

/// Smallest eigenvalue of a real symmetric matrix on the complement of unit `k`.
fn gap_on_complement(g: &DMatrix<f64>, k: &DVector<f64>) -> f64 {
    let d = g.nrows();
    if d < 2 {
        return f64::INFINITY;
    }
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for c in 0..d {
        let mut v = DVector::from_fn(d, |r, _| if r == c { 1.0 } else { 0.0 });
        for _ in 0..2 {
            let p = k.dot(&v);
            v -= k * p;
            for b in &basis {
                let p = b.dot(&v);
                v -= b * p;
            }
        }
        let nv = v.norm();
        if nv > 1e-8 {
            basis.push(v / nv);
        }
        if basis.len() == d - 1 {
            break;
        }
    }
    let q = DMatrix::from_columns(&basis);
    let c = q.transpose() * g * &q;
    let c = (&c + c.transpose()) * 0.5;
    c.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Fermi-Golden-Rule level-shift matrix, its gap above the Gibbs vector, and
/// the explicit lower-bound scalar.
pub fn gamma0_matrix(spec: &ModelSpec) -> Result<Gamma0> {
    let e = &spec.atom.energies;
    let d = e.len();
    let beta = spec.beta;
    let mut kappa = DMatrix::zeros(d, d);
    for m in 0..d {
        for n in 0..d {
            if e[m] != e[n] {
                kappa[(m, n)] = transition_weight(spec, m, n)?;
            }
        }
    }
    let mut g = DMatrix::zeros(d, d);
    for k in 0..d {
        for i in 0..d {
            if i == k || e[i] == e[k] {
                continue;
            }
            g[(k, k)] += kappa[(i, k)] + (-beta * (e[i] - e[k])).exp() * kappa[(k, i)];
            g[(i, k)] = -((-beta * (e[k] - e[i]) / 2.0).exp() * kappa[(i, k)] + (-beta * (e[i] - e[k]) / 2.0).exp() * kappa[(k, i)]);
        }
    }
    let w = gibbs_weights(&spec.atom, beta);
    let kv = DVector::from_iterator(d, w.iter().map(|p| p.sqrt()));
    let gap = gap_on_complement(&g, &kv);
    let fgr = fgr_value(spec);
    let mut bound = f64::INFINITY;
    for m in 0..d {
        for n in 0..d {
            if e[m] == e[n] {
                continue;
            }
            let wdiff = (e[m] - e[n]).abs();
            let mut s = C64::new(0.0, 0.0);
            let mut ang = 4.0 * PI;
            for c in &spec.couplings {
                s += c.g[(m, n)] * c.ff.g(wdiff);
                ang = c.ff.angular_factor;
            }
            // Z / |e^{−βE_m} − e^{−βE_n}| with normalized weights
            let ratio = 1.0 / (w[m] - w[n]).abs();
            bound = bound.min(wdiff * wdiff * ratio * ang * s.norm_sqr());
        }
    }
    if !bound.is_finite() {
        bound = 0.0;
    }
    let (gap, warning) = if fgr > 0.0 {
        (gap, None)
    } else {
        (gap.max(0.0), Some("transition weight vanishes at some Bohr frequency; gap not guaranteed".to_string()))
    };
    Ok(Gamma0 {
        matrix: (0..d).map(|i| (0..d).map(|j| g[(i, j)]).collect()).collect(),
        gap,
        explicit_bound: bound,
        fgr,
        warning,
    })
}

/// `ε = ν⁻³|λ′|^e`, `θ = |λ′|^t`, `δ = θλ²γ₀/ε` with `λ′ = ν^{9/2}λ`.
pub fn choose_pc_parameters(lambda: f64, nu: f64, e: f64, t: f64, gamma0: f64) -> Result<PCParameters> {
    if !(0.0 < t) {
        return Err(Error::Domain(format!("need 0 < t, got t = {t}")));
    }
    if !(t < e) {
        return Err(Error::Domain(format!("need t < e, got t = {t}, e = {e}")));
    }
    if !(e < 1.0) {
        return Err(Error::Domain(format!("need e < 1, got e = {e}")));
    }
    if !(t > 3.0 * e - 2.0) {
        return Err(Error::Domain(format!("need t > 3e − 2, got t = {t}, e = {e}")));
    }
    if !(nu >= 1.0) {
        return Err(Error::Domain(format!("need nu >= 1, got {nu}")));
    }
    if lambda == 0.0 {
        return Err(Error::Domain("lambda must be nonzero".into()));
    }
    let lp = nu.powf(4.5) * lambda.abs();
    let epsilon = nu.powi(-3) * lp.powf(e);
    let theta = lp.powf(t);
    Ok(PCParameters {
        theta,
        epsilon,
        delta: theta * lambda * lambda * gamma0 / epsilon,
        m: 0.0,
        nu,
        e,
        t,
    })
}

/// Factor applied to the measured `‖(N+1)^{1/2}Ω_{β,λ}‖` to pick `ν`.
pub const NU_MARGIN: f64 = 1.2;

/// `ν₀ = ‖(N+1)^{1/2}ψ‖` for unit `ψ`.
pub fn nu_of(bundle: &LiouvillianBundle, psi: &StateVector) -> f64 {
    let nn = psi.norm() * psi.norm();
    (psi.expectation(&bundle.n) / nn + 1.0).sqrt()
}

/// Parameters with `ν = NU_MARGIN·ν₀(Ω_{β,λ})` and `γ₀` from [`gamma0_matrix`].
pub fn auto_pc_parameters(bundle: &LiouvillianBundle, e: f64, t: f64) -> Result<PCParameters> {
    let psi = interacting_kms_vector(bundle)?;
    let nu = (NU_MARGIN * nu_of(bundle, &psi)).max(1.0);
    let g0 = gamma0_matrix(&bundle.spec)?.gap;
    choose_pc_parameters(bundle.lambda(), nu, e, t, g0)
}

/// Regularized level-shift matrices at `ε₀, ε₀/2, ε₀/4` on uniform one-boson
/// grids fine enough to resolve each Lorentzian, and their quadratic
/// extrapolation to `ε = 0`.
#[derive(Clone, Debug)]
pub struct LsoExtrapolation {
    pub epsilons: [f64; 3],
    pub matrices: [DMatrix<C64>; 3],
    pub limit: DMatrix<C64>,
}

pub fn extrapolate_lso(spec: &ModelSpec, eps0: f64, u_max: f64, points_per_width: usize) -> Result<LsoExtrapolation> {
    let epsilons = [eps0, eps0 / 2.0, eps0 / 4.0];
    let mut mats = Vec::with_capacity(3);
    for &eps in &epsilons {
        let du = eps / points_per_width as f64;
        let m = 2 * ((u_max / du).ceil() as usize);
        let grid = BathGrid::uniform(u_max, m)?;
        let basis = enumerate_basis(m, 1)?;
        let bundle = LiouvillianBundle {
            l0: build_l0(spec, &basis, &grid)?,
            i: build_i(spec, &basis, &grid)?,
            i_ell: OperatorMatrix::zeros(0, 0),
            i1: OperatorMatrix::zeros(0, 0),
            n: build_n(spec, &basis),
            spec: spec.clone(),
            basis,
            grid,
        };
        mats.push(regularized_lso(&bundle, eps)?);
    }
    let c = |x: f64| C64::new(x, 0.0);
    // a + bε + cε² through the three points
    let limit = (&mats[2] * c(8.0) - &mats[1] * c(6.0) + &mats[0]) / c(3.0);
    let matrices: [DMatrix<C64>; 3] = mats.try_into().expect("three matrices");
    Ok(LsoExtrapolation { epsilons, matrices, limit })
}

/// `A₀ = iθλ(Π I R̄² − R̄² I Π)` with `R̄² = (1−Π)(L₀²+ε²)^{−1}(1−Π)`.
pub fn build_a0(bundle: &LiouvillianBundle, params: &PCParameters) -> OperatorMatrix {
    let n = bundle.dim();
    let lambda = bundle.lambda();
    if lambda == 0.0 {
        return OperatorMatrix::zeros(n, n);
    }
    let mut r2: Vec<f64> = bundle.l0.diagonal().iter().map(|l| 1.0 / (l.re * l.re + params.epsilon * params.epsilon)).collect();
    let pi = pi_projection(bundle);
    for k in pi_indices(bundle) {
        r2[k] = 0.0;
    }
    let x = pi.matmul(&bundle.i).matmul(&OperatorMatrix::from_real_diagonal(&r2));
    let c = C64::new(0.0, params.theta * lambda);
    let a = x.sub(&x.adjoint()).scale(c);
    a.verify_hermitian().expect("A0 is Hermitian by construction")
}

/// `B = N + λI₁ + i[L_λ, A₀]`.
pub fn build_b(bundle: &LiouvillianBundle, params: &PCParameters) -> Result<OperatorMatrix> {
    let a0 = build_a0(bundle, params);
    let l = bundle.l_lambda();
    let comm = l.commutator(&a0).scale(C64::new(0.0, 1.0));
    bundle.n.add_scaled(&bundle.i1, C64::new(bundle.lambda(), 0.0)).add(&comm).verify_hermitian()
}

/// `(⟨ψ,Bψ⟩, ‖N^{1/2}ψ‖/(c(p,β)|λ|‖ψ‖))`.
pub fn virial_check(bundle: &LiouvillianBundle, params: &PCParameters, psi: &StateVector) -> Result<(f64, f64)> {
    let b = build_b(bundle, params)?;
    let nn = psi.norm() * psi.norm();
    let b_exp = psi.expectation(&b) / nn;
    let n_half = (psi.expectation(&bundle.n) / nn).max(0.0).sqrt();
    let denom = c_p_beta(&bundle.spec)? * bundle.lambda().abs();
    let ratio = if denom == 0.0 {
        if n_half == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        n_half / denom
    };
    Ok((b_exp, ratio))
}

/// Orthonormal basis of the range of a projection, coordinate vectors when
/// the projection is diagonal.
fn range_basis(proj: &OperatorMatrix, complement: bool) -> Result<DMatrix<C64>> {
    let n = proj.dim();
    if proj.is_diagonal() {
        let keep: Vec<usize> = proj
            .diagonal()
            .iter()
            .enumerate()
            .filter(|(_, z)| (z.re > 0.5) != complement)
            .map(|(k, _)| k)
            .collect();
        let mut q = DMatrix::zeros(n, keep.len());
        for (c, &k) in keep.iter().enumerate() {
            q[(k, c)] = C64::new(1.0, 0.0);
        }
        return Ok(q);
    }
    let p = proj.to_dense();
    if (&p * &p - &p).norm() > 1e-8 * (1.0 + p.norm()) {
        return Err(Error::Invalid("proj is not idempotent".into()));
    }
    let (vals, vecs) = hermitian_eigen(&p);
    let cols: Vec<usize> = (0..n).filter(|&k| (vals[k] > 0.5) != complement).collect();
    let mut q = DMatrix::zeros(n, cols.len());
    for (c, &k) in cols.iter().enumerate() {
        q.set_column(c, &vecs.column(k));
    }
    Ok(q)
}

/// Feshbach map `P(M − M P̄(P̄MP̄ − m)^{−1} P̄ M)P` expressed in an orthonormal
/// basis of `Ran P` (coordinate order when `P` is diagonal).
pub fn feshbach_map(m: &OperatorMatrix, proj: &OperatorMatrix, spectral: f64) -> Result<DMatrix<C64>> {
    if m.dim() != proj.dim() || m.rows() != m.cols() {
        return Err(Error::Invalid("feshbach_map: shape mismatch".into()));
    }
    let p = range_basis(proj, false)?;
    let q = range_basis(proj, true)?;
    let md = m.to_dense();
    let pmp = p.adjoint() * &md * &p;
    if q.ncols() == 0 {
        return Ok(pmp);
    }
    let mut qmq = q.adjoint() * &md * &q;
    for k in 0..qmq.nrows() {
        qmq[(k, k)] -= C64::new(spectral, 0.0);
    }
    let smin = min_singular_value(&qmq);
    if smin <= 1e-10 {
        return Err(Error::Numerical(format!(
            "complement block minus m is near-singular: smallest singular value {smin:.3e}"
        )));
    }
    let pmq = p.adjoint() * &md * &q;
    let qmp = q.adjoint() * &md * &p;
    let solved = qmq
        .lu()
        .solve(&qmp)
        .ok_or_else(|| Error::Numerical("complement block solve failed".into()))?;
    Ok(pmp - pmq * solved)
}

#[derive(Clone, Debug, Serialize)]
pub struct PcProbe {
    pub min_quadratic_form: f64,
    pub gap_prediction: f64,
    pub pc_form_prediction: f64,
    pub subspace_dim: usize,
    pub window_count: usize,
    pub gamma0: f64,
}

/// Minimal value of `B + δP_{Ω_{β,λ}}` on the part of `Ran E_Δ(L_λ)` with
/// `⟨N+1⟩ ≤ ν²`, orthogonal to `Ω_{β,λ}`.
pub fn pc_positivity_probe(bundle: &LiouvillianBundle, params: &PCParameters, window: (f64, f64)) -> Result<PcProbe> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(Error::Domain(format!("empty window ({lo}, {hi})")));
    }
    let e = &bundle.spec.atom.energies;
    for a in e {
        for b in e {
            let w = a - b;
            if w != 0.0 && lo < w && w < hi {
                return Err(Error::Domain(format!("window contains the Bohr frequency {w}")));
            }
        }
    }
    if bundle.dim() > DENSE_EIGEN_LIMIT {
        return Err(Error::Budget {
            what: "probe spectral window".into(),
            dim: bundle.dim(),
            limit: DENSE_EIGEN_LIMIT,
        });
    }
    let l = bundle.l_lambda();
    let (vals, vecs) = hermitian_eigen(&l.to_dense());
    let omega = interacting_kms_vector(bundle)?;
    let b = build_b(bundle, params)?;
    let nd = bundle.n.diagonal();
    let nu2 = params.nu * params.nu;
    let n = bundle.dim();
    // window eigenvectors orthogonalized against Ω_{β,λ}
    let mut window_count = 0;
    let mut span: Vec<Vec<C64>> = Vec::new();
    for (k, &ev) in vals.iter().enumerate() {
        if !(lo < ev && ev < hi) {
            continue;
        }
        window_count += 1;
        let mut w: Vec<C64> = vecs.column(k).iter().copied().collect();
        for _ in 0..2 {
            let c = inner(omega.coeffs(), &w);
            axpy(-c, omega.coeffs(), &mut w);
            for q in &span {
                let c = inner(q, &w);
                axpy(-c, q, &mut w);
            }
        }
        let nw = norm(&w);
        if nw > 1e-6 {
            w.iter_mut().for_each(|x| *x /= nw);
            span.push(w);
        }
    }
    // largest subspace of the window on which ⟨N+1⟩ ≤ ν²
    let s = span.len();
    let mut nc = DMatrix::<C64>::zeros(s, s);
    let nv: Vec<Vec<C64>> = span
        .iter()
        .map(|v| v.iter().zip(&nd).map(|(x, m)| x * (m.re + 1.0)).collect())
        .collect();
    for i in 0..s {
        for j in 0..s {
            nc[(i, j)] = inner(&span[i], &nv[j]);
        }
    }
    let (nvals, nvecs) = hermitian_eigen(&nc);
    let mut kept: Vec<Vec<C64>> = Vec::new();
    for (c, &x) in nvals.iter().enumerate() {
        if x > nu2 {
            continue;
        }
        let mut v = vec![C64::new(0.0, 0.0); n];
        for (r, q) in span.iter().enumerate() {
            axpy(nvecs[(r, c)], q, &mut v);
        }
        kept.push(v);
    }
    if kept.is_empty() {
        return Err(Error::Numerical(format!(
            "probe subspace is empty: {window_count} eigenvalues in ({lo}, {hi}), none with <N+1> <= {nu2} off the KMS vector"
        )));
    }
    let k = kept.len();
    let bv: Vec<Vec<C64>> = kept.iter().map(|v| b.matvec(v)).collect();
    let mut h = DMatrix::<C64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let mut z = inner(&kept[i], &bv[j]);
            // δ P_Ω term, zero up to rounding on the complement
            z += params.delta * (inner(&kept[i], omega.coeffs()) * inner(omega.coeffs(), &kept[j]));
            h[(i, j)] = z;
        }
    }
    let (hv, _) = hermitian_eigen(&h);
    let g0 = gamma0_matrix(&bundle.spec)?.gap;
    let lam = bundle.lambda().abs();
    let eta = params.e - params.t;
    Ok(PcProbe {
        min_quadratic_form: hv[0],
        gap_prediction: params.theta * lam * lam * g0 / (4.0 * params.epsilon),
        pc_form_prediction: lam.powf(2.0 - eta) * params.nu.powf(3.0 - 4.5 * eta) * g0,
        subspace_dim: k,
        window_count,
        gamma0: g0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouvillian::assemble;
    use crate::model::{pauli, spin_boson, FormFactor};

    fn bundle(lambda: f64, m: usize, nmax: usize) -> LiouvillianBundle {
        let spec = spin_boson(1.0, pauli::x(), FormFactor::gaussian(0.5, 1.0, 2.0), 1.0, lambda).unwrap();
        let grid = BathGrid::uniform(3.0, m).unwrap();
        let basis = enumerate_basis(m, nmax).unwrap();
        assemble(&spec, &basis, &grid).unwrap()
    }

    #[test]
    fn l0_kernel_multiplicity() {
        let b = bundle(0.0, 2, 1);
        let r = low_spectrum(&b.l0, 2, 1e-12).unwrap();
        assert!(r.eigenvalues.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn shift_invert_agrees_with_dense() {
        let b = bundle(0.2, 6, 2);
        let l = b.l_lambda();
        let d = low_spectrum_with(&l, 4, 1e-9, EigenSolver::Dense).unwrap();
        let s = low_spectrum_with(&l, 4, 1e-9, EigenSolver::ShiftInvert { shift: -1e-3 }).unwrap();
        for (a, c) in d.eigenvalues.iter().zip(&s.eigenvalues) {
            assert!((a - c).abs() < 1e-9, "{a} {c}");
        }
    }

    #[test]
    fn pi_structure() {
        let b = bundle(0.1, 4, 2);
        let p = pi_projection(&b);
        let tr: f64 = p.diagonal().iter().map(|z| z.re).sum();
        assert_eq!(tr, 2.0);
        let pip = p.matmul(&b.i).matmul(&p);
        assert!(pip.max_abs() < 1e-15);
    }

    #[test]
    fn lso_zero_coupling_and_psd() {
        let b = bundle(0.1, 8, 1);
        let mut spec0 = b.spec.clone();
        spec0 = spec0.with_scaled_couplings(0.0);
        let b0 = assemble(&spec0, &b.basis, &b.grid).unwrap();
        assert!(regularized_lso(&b0, 0.1).unwrap().norm() == 0.0);
        for eps in [0.5, 0.1, 0.01] {
            let m = regularized_lso(&b, eps).unwrap();
            let (v, _) = hermitian_eigen(&m);
            assert!(v[0] > -1e-12 * v[1].abs().max(1.0));
        }
    }

    #[test]
    fn gamma0_reference_values() {
        let ff = FormFactor::gaussian(0.5, 1.0, f64::INFINITY);
        let spec = spin_boson(1.0, pauli::x(), ff, 1.0, 0.1).unwrap();
        let g = gamma0_matrix(&spec).unwrap();
        let expect = 4.0 * PI * (1.0 + (-1.0f64).exp()) / (1.0 - (-1.0f64).exp());
        assert!((g.explicit_bound - expect).abs() < 1e-10, "{}", g.explicit_bound);
        assert!((expect - 27.19).abs() < 0.01);
        let gm = g.dense();
        let w = gibbs_weights(&spec.atom, 1.0);
        let k = DVector::from_iterator(2, w.iter().map(|p| p.sqrt()));
        assert!((&gm * &k).norm() < 1e-12 * gm.norm());
        assert!((g.gap - PI * expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn gamma0_gap_zero_without_transitions() {
        let ff = FormFactor::gaussian(0.5, 1.0, 2.0);
        let spec = spin_boson(1.0, pauli::z(), ff, 1.0, 0.1).unwrap();
        let g = gamma0_matrix(&spec).unwrap();
        assert_eq!(g.fgr, 0.0);
        assert!(g.gap.abs() < 1e-14 && g.warning.is_some());
    }

    #[test]
    fn pc_parameters_example() {
        let p = choose_pc_parameters(0.1, 1.0, 0.6, 0.1, 1.0).unwrap();
        assert!((p.epsilon - 0.1f64.powf(0.6)).abs() < 1e-15);
        assert!((p.epsilon - 0.2512).abs() < 1e-4);
        assert!((p.theta - 0.7943).abs() < 1e-4);
        assert!(choose_pc_parameters(0.1, 1.0, 0.5, 0.6, 1.0).is_err());
        assert!(choose_pc_parameters(0.1, 1.0, 0.9, 0.5, 1.0).unwrap_err().to_string().contains("3e"));
    }

    #[test]
    fn a0_and_b_structure() {
        let b = bundle(0.1, 4, 2);
        let params = choose_pc_parameters(0.1, 1.0, 0.6, 0.1, 1.0).unwrap();
        let a = build_a0(&b, &params);
        let p = pi_projection(&b);
        assert!(p.matmul(&a).matmul(&p).max_abs() == 0.0);
        assert!(build_a0(&b.with_lambda(0.0), &params).nnz() == 0);
        let bb = build_b(&b, &params).unwrap();
        assert!(bb.hermiticity_residual() <= 1e-12);
        let b0 = build_b(&b.with_lambda(0.0), &params).unwrap();
        assert!(b0.sub(&b.n).max_abs() == 0.0);
    }

    #[test]
    fn feshbach_toy() {
        let (a, bb, c, m) = (2.0, C64::new(0.3, -0.4), -1.0, 0.25);
        let mm = DMatrix::from_row_slice(2, 2, &[C64::new(a, 0.0), bb, bb.conj(), C64::new(c, 0.0)]);
        let proj = OperatorMatrix::from_real_diagonal(&[1.0, 0.0]);
        let f = feshbach_map(&OperatorMatrix::from_dense(&mm), &proj, m).unwrap();
        let expect = a - bb.norm_sqr() / (c - m);
        assert!((f[(0, 0)].re - expect).abs() < 1e-14);
        assert!(feshbach_map(&OperatorMatrix::from_dense(&mm), &proj, c).is_err());
    }
}
