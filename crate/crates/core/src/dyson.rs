//! Finite-volume model, imaginary-time Wick expansion and the graph bound on
//! `ω_{β,λ}(Q)`.
//!
//! Lattice modes `n ∈ ℤ³` with equal `|n|` couple through the same value of
//! the radial form factor, so each shell is replaced by one effective mode with
//! coupling `(2π/L)^{3/2}√mult·g(2π|n|/L)`. The orthogonal combinations are free
//! and cancel from every trace ratio and correlation function used here.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{dgamma, enumerate_basis, field, FockBasis, OneBosonVector};
use crate::linalg::hermitian_eigen;
use crate::model::{AtomSpec, CouplingTerm, FormFactor};
use crate::operator::{OperatorMatrix, C64};
use crate::quad::integrate_half_line;

#[derive(Clone, Debug)]
pub struct FvMode {
    pub energy: f64,
    pub multiplicity: usize,
    /// Effective coupling per coupling term.
    pub couplings: Vec<C64>,
}

#[derive(Clone, Debug)]
pub struct FiniteVolumeModel {
    /// Box side; 0 for models given directly by their modes.
    pub l: f64,
    pub n_cut: usize,
    pub atom: AtomSpec,
    pub g: Vec<DMatrix<C64>>,
    pub form_factors: Vec<FormFactor>,
    pub beta: f64,
    pub lambda: f64,
    pub modes: Vec<FvMode>,
}

impl FiniteVolumeModel {
    /// Lattice model with `|n| ≤ n_cut` plus the zero mode (energy 1,
    /// coupling `(2π/L)^{3/2}`).
    pub fn lattice(atom: AtomSpec, couplings: &[CouplingTerm], l: f64, n_cut: usize, beta: f64, lambda: f64) -> Result<Self> {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Domain(format!("box side must be positive, got {l}")));
        }
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        if couplings.is_empty() {
            return Err(Error::Invalid("at least one coupling term is needed".into()));
        }
        let unit = 2.0 * PI / l;
        let vol = unit.powf(1.5);
        let nc = n_cut as i64;
        let mut shells: BTreeMap<i64, usize> = BTreeMap::new();
        for a in -nc..=nc {
            for b in -nc..=nc {
                for c in -nc..=nc {
                    let r2 = a * a + b * b + c * c;
                    if r2 > 0 && r2 <= nc * nc {
                        *shells.entry(r2).or_default() += 1;
                    }
                }
            }
        }
        let mut modes = vec![FvMode {
            energy: 1.0,
            multiplicity: 1,
            couplings: vec![C64::new(vol, 0.0); couplings.len()],
        }];
        for (r2, mult) in shells {
            let k = unit * (r2 as f64).sqrt();
            modes.push(FvMode {
                energy: k,
                multiplicity: mult,
                couplings: couplings.iter().map(|c| c.ff.g(k) * (vol * (mult as f64).sqrt())).collect(),
            });
        }
        Ok(Self {
            l,
            n_cut,
            atom,
            g: couplings.iter().map(|c| c.g.clone()).collect(),
            form_factors: couplings.iter().map(|c| c.ff.clone()).collect(),
            beta,
            lambda,
            modes,
        })
    }

    /// Smallest `n_cut` whose dropped tail of `Σ|g^Λ(n)|²` is at most `rel`
    /// of the continuum total for every coupling term.
    pub fn auto_cutoff(couplings: &[CouplingTerm], l: f64, rel: f64) -> Result<usize> {
        let unit = 2.0 * PI / l;
        for n_cut in 1..=200usize {
            let kc = unit * n_cut as f64;
            let ok = couplings.iter().all(|c| {
                let f = |u: f64| u * u * c.ff.g(u).norm_sqr();
                let total = integrate_half_line(f, c.ff.profile.scale(), 1e-10).value;
                let tail = integrate_half_line(|v| f(kc + v), c.ff.profile.scale(), 1e-10).value;
                tail <= rel * total
            });
            if ok {
                return Ok(n_cut);
            }
        }
        Err(Error::Budget {
            what: "lattice cutoff".into(),
            dim: 200,
            limit: 200,
        })
    }

    /// Model given directly by mode energies and per-term couplings.
    pub fn from_modes(atom: AtomSpec, g: Vec<DMatrix<C64>>, modes: Vec<FvMode>, beta: f64, lambda: f64) -> Result<Self> {
        if modes.iter().any(|m| m.couplings.len() != g.len() || !(m.energy > 0.0)) {
            return Err(Error::Invalid("each mode needs a positive energy and one coupling per term".into()));
        }
        Ok(Self {
            l: 0.0,
            n_cut: 0,
            atom,
            g,
            form_factors: Vec::new(),
            beta,
            lambda,
            modes,
        })
    }

    /// One mode of energy `e` coupled with strength `c` to a two-level atom
    /// through the identity.
    pub fn single_mode(e: f64, c: f64, beta: f64) -> Self {
        let atom = AtomSpec::new(vec![0.0, 1.0]).expect("two levels");
        Self::from_modes(
            atom,
            vec![DMatrix::identity(2, 2)],
            vec![FvMode {
                energy: e,
                multiplicity: 1,
                couplings: vec![C64::new(c, 0.0)],
            }],
            beta,
            0.0,
        )
        .expect("valid single mode")
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        let mut m = self.clone();
        m.beta = beta;
        m
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut m = self.clone();
        m.lambda = lambda;
        m
    }

    /// `C′ = Σ_α ‖G_α‖`.
    pub fn c_prime(&self) -> f64 {
        self.g.iter().map(crate::linalg::spectral_norm).sum()
    }

    fn coupling_vector(&self, alpha: usize) -> OneBosonVector {
        OneBosonVector {
            coeffs: self.modes.iter().map(|m| m.couplings[alpha]).collect(),
        }
    }

    fn energies(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.energy).collect()
    }
}

/// `Δ_j = [(j−1)β/2M, jβ/2M]`, `j = 1..2M`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SegmentPartition {
    pub two_m: usize,
    pub beta: f64,
}

impl SegmentPartition {
    pub fn new(two_m: usize, beta: f64) -> Result<Self> {
        if two_m == 0 || !two_m.is_multiple_of(2) {
            return Err(Error::Domain(format!("2M must be even and positive, got {two_m}")));
        }
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { two_m, beta })
    }

    pub fn width(&self) -> f64 {
        self.beta / self.two_m as f64
    }

    /// `τ = β/4M`.
    pub fn tau(&self) -> f64 {
        self.beta / (2.0 * self.two_m as f64)
    }

    /// `[lo, hi]` of segment `j` (1-based).
    pub fn segment(&self, j: usize) -> (f64, f64) {
        let w = self.width();
        ((j - 1) as f64 * w, j as f64 * w)
    }

    /// 1-based segment containing `t`.
    pub fn segment_of(&self, t: f64) -> usize {
        ((t / self.width()).floor() as usize + 1).clamp(1, self.two_m)
    }
}

/// `ω(φ(g_l, t_l) φ(g_r, t_r))` for `0 ≤ t_l ≤ t_r ≤ β`, with
/// `φ = (a* + a)/√2` and `φ(t) = e^{−tH_f}φe^{tH_f}`.
pub fn propagator(fv: &FiniteVolumeModel, alpha_l: usize, alpha_r: usize, t_l: f64, t_r: f64) -> Result<f64> {
    let beta = fv.beta;
    if !(0.0 <= t_l && t_l <= t_r && t_r <= beta) {
        return Err(Error::Domain(format!("need 0 <= t_l <= t_r <= beta, got {t_l}, {t_r}, {beta}")));
    }
    let mut s = C64::new(0.0, 0.0);
    for m in &fv.modes {
        let (gl, gr) = (m.couplings[alpha_l], m.couplings[alpha_r]);
        let e = m.energy;
        let bose = 1.0 / (-(-beta * e).exp_m1());
        s += (gr.conj() * gl * (-(beta + t_l - t_r) * e).exp() + gl.conj() * gr * (-(t_r - t_l) * e).exp()) * bose;
    }
    Ok(0.5 * s.re)
}

/// A perfect matching of `0..2N`, pairs `(l, r)` with `l < r`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Pairing {
    pub pairs: Vec<(usize, usize)>,
}

pub const MAX_PAIRING_POINTS: usize = 12;

/// All `(2N−1)!!` perfect matchings; the first free index is always paired
/// first, partners in increasing order.
pub fn enumerate_pairings(two_n: usize) -> Result<Vec<Pairing>> {
    if !two_n.is_multiple_of(2) {
        return Err(Error::Domain(format!("odd number of points {two_n}")));
    }
    if two_n > MAX_PAIRING_POINTS {
        return Err(Error::Budget {
            what: "pairing enumeration".into(),
            dim: two_n,
            limit: MAX_PAIRING_POINTS,
        });
    }
    fn rec(free: &mut Vec<usize>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Pairing>) {
        if free.is_empty() {
            out.push(Pairing { pairs: cur.clone() });
            return;
        }
        let first = free.remove(0);
        for k in 0..free.len() {
            let partner = free.remove(k);
            cur.push((first, partner));
            rec(free, cur, out);
            cur.pop();
            free.insert(k, partner);
        }
        free.insert(0, first);
    }
    let mut out = Vec::new();
    rec(&mut (0..two_n).collect(), &mut Vec::new(), &mut out);
    Ok(out)
}

/// Pairwise (tree) sum, independent of thread scheduling.
fn tree_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => tree_sum(&v[..n / 2]) + tree_sum(&v[n / 2..]),
    }
}

fn check_times(times: &[f64], beta: f64) -> Result<()> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|&t| !(0.0..=beta).contains(&t)) {
        return Err(Error::Domain("times must be ascending in [0, beta]".into()));
    }
    Ok(())
}

fn pairing_value(fv: &FiniteVolumeModel, p: &Pairing, alphas: &[usize], times: &[f64]) -> Result<f64> {
    let mut v = 1.0;
    for &(l, r) in &p.pairs {
        v *= propagator(fv, alphas[l], alphas[r], times[l], times[r])?;
    }
    Ok(v)
}

/// `ω(φ_{α₁}(t₁)⋯φ_{α_{2N}}(t_{2N}))` by Wick's theorem.
pub fn wick_expectation(fv: &FiniteVolumeModel, alphas: &[usize], times: &[f64]) -> Result<f64> {
    if alphas.len() != times.len() {
        return Err(Error::Invalid("alphas and times differ in length".into()));
    }
    if !alphas.len().is_multiple_of(2) {
        return Err(Error::Domain(format!("odd moment of order {} requested", alphas.len())));
    }
    check_times(times, fv.beta)?;
    let pairings = enumerate_pairings(alphas.len())?;
    let vals: Vec<Result<f64>> = pairings.par_iter().map(|p| pairing_value(fv, p, alphas, times)).collect();
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    Ok(tree_sum(&vals))
}

/// Same correlation from a dense trace over the occupation basis with total
/// occupation at most `n_max`.
pub fn brute_force_correlation(fv: &FiniteVolumeModel, alphas: &[usize], times: &[f64], n_max: usize) -> Result<f64> {
    check_times(times, fv.beta)?;
    let basis = enumerate_basis(fv.modes.len(), n_max)?;
    if basis.dim() > 5000 {
        return Err(Error::Budget {
            what: "brute-force correlation".into(),
            dim: basis.dim(),
            limit: 5000,
        });
    }
    let h: Vec<f64> = dgamma(&basis, &fv.energies()).diagonal().iter().map(|z| z.re).collect();
    let phis: Vec<DMatrix<C64>> = (0..fv.g.len()).map(|a| field(&basis, &fv.coupling_vector(a)).to_dense()).collect();
    let diag = |s: f64| DMatrix::from_fn(h.len(), h.len(), |i, j| if i == j { C64::new((-s * h[i]).exp(), 0.0) } else { C64::new(0.0, 0.0) });
    let n = times.len();
    if n == 0 {
        return Ok(1.0);
    }
    // tr(e^{−(β−t_n+t_1)H} φ e^{−(t_2−t_1)H} φ ⋯ φ) / Z, every exponent non-positive
    let mut m = diag(fv.beta - times[n - 1] + times[0]);
    for k in 0..n {
        m *= &phis[alphas[k]];
        if k + 1 < n {
            m *= diag(times[k + 1] - times[k]);
        }
    }
    let z: f64 = h.iter().map(|e| (-fv.beta * e).exp()).sum();
    Ok(m.trace().re / z)
}

/// `(d₋, d₊, d)` for segments `l, r` (1-based).
pub fn segment_distance(part: &SegmentPartition, l: usize, r: usize) -> Result<(f64, f64, f64)> {
    if !(1..=part.two_m).contains(&l) || !(1..=part.two_m).contains(&r) {
        return Err(Error::Domain(format!("segments {l}, {r} outside 1..={}", part.two_m)));
    }
    let w = part.width();
    let gap = l.abs_diff(r) as f64;
    let dm = if l == r { 0.0 } else { w * (gap - 1.0) };
    let dp = part.beta - w * (gap + 1.0);
    Ok((dm, dp, dm.min(dp)))
}

/// Where the one-boson integrals in the pair bound are taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bath {
    /// Mode sum over the model's lattice modes.
    Lattice,
    /// Radial quadrature over `k ∈ ℝ³` using the form factors.
    Continuum,
}

fn weighted_norm(fv: &FiniteVolumeModel, alpha: usize, d: f64, bath: Bath) -> Result<f64> {
    let beta = fv.beta;
    match bath {
        Bath::Lattice => Ok(fv
            .modes
            .iter()
            .map(|m| m.couplings[alpha].norm_sqr() * (-d * m.energy).exp() / (-(-beta * m.energy).exp_m1()))
            .sum()),
        Bath::Continuum => {
            let ff = fv
                .form_factors
                .get(alpha)
                .ok_or_else(|| Error::Invalid("continuum bound needs form factors".into()))?;
            let r = integrate_half_line(
                |u| ff.angular_factor * u * u * ff.g(u).norm_sqr() * (-d * u).exp() / (-(-beta * u).exp_m1()),
                ff.profile.scale(),
                1e-10,
            );
            if !r.converged {
                return Err(Error::Convergence {
                    what: "pair-bound quadrature".into(),
                    achieved: r.error,
                    target: 1e-10 * r.value.abs(),
                });
            }
            Ok(r.value)
        }
    }
}

/// `C(Δ_l, Δ_r) = 4 max_α ⟨g_α, e^{−d|k|}/(1−e^{−β|k|}) g_α⟩`.
pub fn pair_bound(fv: &FiniteVolumeModel, part: &SegmentPartition, l: usize, r: usize, bath: Bath) -> Result<f64> {
    let (_, _, d) = segment_distance(part, l, r)?;
    let mut best: f64 = 0.0;
    for a in 0..fv.g.len() {
        best = best.max(weighted_norm(fv, a, d, bath)?);
    }
    Ok(4.0 * best)
}

/// `1 + 1/β + (β/2M)^{−2−2p}/(p+1)`.
pub fn gamma_shape(beta: f64, two_m: usize, p: f64) -> f64 {
    1.0 + 1.0 / beta + (beta / two_m as f64).powf(-2.0 - 2.0 * p) / (p + 1.0)
}

fn model_p(fv: &FiniteVolumeModel) -> Result<f64> {
    let p = fv
        .form_factors
        .first()
        .map(|f| f.p)
        .ok_or_else(|| Error::Invalid("model has no form factors".into()))?;
    if !(p > -1.0) {
        return Err(Error::Domain(format!("need p > -1, got {p}")));
    }
    Ok(p)
}

/// `max_Δ Σ_{Δ′} C(Δ, Δ′)`.
pub fn gamma_sum(fv: &FiniteVolumeModel, part: &SegmentPartition, bath: Bath) -> Result<f64> {
    let mut best: f64 = 0.0;
    for l in 1..=part.two_m {
        let mut s = 0.0;
        for r in 1..=part.two_m {
            s += pair_bound(fv, part, l, r, bath)?;
        }
        best = best.max(s);
    }
    Ok(best)
}

/// Constant `C` making `C·gamma_shape` equal to `gamma_sum` at a reference.
pub fn fit_gamma_constant(fv: &FiniteVolumeModel, reference: &SegmentPartition, bath: Bath) -> Result<f64> {
    let p = model_p(fv)?;
    let m = fv.with_beta(reference.beta);
    Ok(gamma_sum(&m, reference, bath)? / gamma_shape(reference.beta, reference.two_m, p))
}

/// `(gamma_sum, fitted·gamma_shape)`.
pub fn gamma_constant(fv: &FiniteVolumeModel, part: &SegmentPartition, bath: Bath, fitted: f64) -> Result<(f64, f64)> {
    let p = model_p(fv)?;
    Ok((gamma_sum(fv, part, bath)?, fitted * gamma_shape(part.beta, part.two_m, p)))
}

/// `(C′|λ|Γβ/2M)^{Σk}·Π k^{k/2}/k!`.
pub fn graph_bound_term(k_list: &[usize], lambda: f64, part: &SegmentPartition, gamma: f64, c_prime: f64) -> Result<f64> {
    if k_list.contains(&0) {
        return Err(Error::Domain("every k_j must be at least 1".into()));
    }
    let x = c_prime * lambda.abs() * gamma * part.width();
    let total: usize = k_list.iter().sum();
    let mut v = x.powi(total as i32);
    for &k in k_list {
        let kf = k as f64;
        v *= kf.powf(kf / 2.0) / factorial(k);
    }
    Ok(v)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|j| j as f64).product()
}

/// `x Σ_{k≥0} x^k (k+1)^{(k+1)/2}/(k+1)!`.
pub fn series_bound(x: f64) -> Result<f64> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::Domain(format!("series argument must be finite and non-negative, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for k in 0..100_000usize {
        let n = (k + 1) as f64;
        // log of x^k n^{n/2} / n!
        let lg = k as f64 * x.ln() + 0.5 * n * n.ln() - ln_factorial(k + 1);
        let term = lg.exp();
        sum += term;
        // terms decay superexponentially once past the peak
        if k > 2 && term <= 1e-13 * sum && n > x * x {
            return Ok(x * sum);
        }
    }
    Err(Error::Convergence {
        what: "series bound".into(),
        achieved: f64::NAN,
        target: 1e-12,
    })
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|j| (j as f64).ln()).sum()
}

/// `2e^{−2τΔ} + series_bound(C′|λ|Γ·2τ)` with `Γ = gamma_sum` on the lattice.
pub fn omega_q_bound(fv: &FiniteVolumeModel, part: &SegmentPartition, tau: f64) -> Result<f64> {
    if fv.beta < 1.0 {
        return Err(Error::Domain(format!("bound stated for beta >= 1, got {}", fv.beta)));
    }
    if (tau - part.tau()).abs() > 1e-12 * tau.max(1.0) || (part.beta - fv.beta).abs() > 1e-12 * fv.beta {
        return Err(Error::Domain(format!("need tau = beta/4M = {}, got {tau}", part.tau())));
    }
    let gap = fv.atom.gap();
    let head = 2.0 * (-2.0 * tau * gap).exp();
    if fv.lambda == 0.0 {
        return Ok(head);
    }
    let gamma = gamma_sum(fv, part, Bath::Lattice)?;
    Ok(head + series_bound(fv.c_prime() * fv.lambda.abs() * gamma * 2.0 * tau)?)
}

/// Dense budget for the finite-volume traces.
pub const FV_DENSE_LIMIT: usize = 4000;

/// `H^Λ_λ` on `ℂ^d ⊗ F_{n_max}` over the model's modes.
pub fn fv_hamiltonian(fv: &FiniteVolumeModel, basis: &FockBasis) -> Result<OperatorMatrix> {
    let d = fv.atom.dim();
    let hat = OperatorMatrix::from_real_diagonal(&fv.atom.energies);
    let mut h = hat.kron(&OperatorMatrix::identity(basis.dim()));
    h = h.add(&OperatorMatrix::identity(d).kron(&dgamma(basis, &fv.energies())));
    if fv.lambda != 0.0 {
        for (a, g) in fv.g.iter().enumerate() {
            let phi = field(basis, &fv.coupling_vector(a));
            h = h.add(&OperatorMatrix::from_dense(g).kron(&phi).scale_real(fv.lambda));
        }
    }
    h.verify_hermitian()
}

fn fv_spectrum(fv: &FiniteVolumeModel, n_max: usize) -> Result<(Vec<f64>, DMatrix<C64>, usize)> {
    let basis = enumerate_basis(fv.modes.len(), n_max)?;
    let dim = fv.atom.dim() * basis.dim();
    if dim > FV_DENSE_LIMIT {
        return Err(Error::Budget {
            what: "finite-volume dense trace".into(),
            dim,
            limit: FV_DENSE_LIMIT,
        });
    }
    let h = fv_hamiltonian(fv, &basis)?;
    let (vals, vecs) = hermitian_eigen(&h.to_dense());
    Ok((vals, vecs, basis.dim()))
}

/// `tr(e^{−βH}(Q⊗1))/tr e^{−βH}` with `Q = 1 − P_{φ₀}`.
pub fn omega_q_exact(fv: &FiniteVolumeModel, n_max: usize) -> Result<f64> {
    let (vals, vecs, nf) = fv_spectrum(fv, n_max)?;
    let e0 = vals[0];
    let mut num = 0.0;
    let mut z = 0.0;
    for (k, &e) in vals.iter().enumerate() {
        let w = (-fv.beta * (e - e0)).exp();
        // weight of the ground atomic level in this eigenvector
        let p0: f64 = (0..nf).map(|f| vecs[(f, k)].norm_sqr()).sum();
        num += w * (1.0 - p0);
        z += w;
    }
    Ok(num / z)
}

/// `tr e^{−βH₀}/tr e^{−βH_λ}` on the same truncation.
pub fn partition_ratio(fv: &FiniteVolumeModel, n_max: usize) -> Result<f64> {
    let (v1, _, _) = fv_spectrum(fv, n_max)?;
    let (v0, _, _) = fv_spectrum(&fv.with_lambda(0.0), n_max)?;
    let shift = v0[0].min(v1[0]);
    let z = |v: &[f64]| v.iter().map(|e| (-fv.beta * (e - shift)).exp()).sum::<f64>();
    Ok(z(&v0) / z(&v1))
}

/// λ = 0 atomic tail quantities.
#[derive(Clone, Debug, Serialize)]
pub struct AtomicTail {
    /// `tr(Q e^{−βH_at})/tr e^{−βH_at}`.
    pub ratio: f64,
    /// `Σ_{j≥1} e^{−β(E_j−E₀)}`.
    pub level_sum: f64,
    /// `2e^{−βΔ}/β`.
    pub integral_bound: f64,
    /// `ratio^{1/2M}`.
    pub root: f64,
    /// `2e^{−2τΔ}`.
    pub tau_bound: f64,
}

pub fn atomic_tail(atom: &AtomSpec, part: &SegmentPartition) -> AtomicTail {
    let e = &atom.energies;
    let beta = part.beta;
    let level_sum: f64 = e.iter().skip(1).map(|x| (-beta * (x - e[0])).exp()).sum();
    let ratio = level_sum / (1.0 + level_sum);
    let gap = atom.gap();
    AtomicTail {
        ratio,
        level_sum,
        integral_bound: 2.0 * (-beta * gap).exp() / beta,
        root: ratio.powf(1.0 / part.two_m as f64),
        tau_bound: 2.0 * (-2.0 * part.tau() * gap).exp(),
    }
}

/// Graph bookkeeping for one correlation: the exact value, `Σ_G |G|` and the
/// right-hand side of the `Π k^{k/2} Σ_G Π C` estimate.
#[derive(Clone, Debug, Serialize)]
pub struct GraphCheck {
    pub exact: f64,
    pub graph_sum: f64,
    pub graph_bound: f64,
    pub graph_count: usize,
}

pub fn graph_check(fv: &FiniteVolumeModel, part: &SegmentPartition, alphas: &[usize], times: &[f64], bath: Bath) -> Result<GraphCheck> {
    let exact = wick_expectation(fv, alphas, times)?;
    let seg: Vec<usize> = times.iter().map(|&t| part.segment_of(t)).collect();
    let mut graphs: BTreeMap<Vec<(usize, usize)>, f64> = BTreeMap::new();
    for p in enumerate_pairings(alphas.len())? {
        let mut key: Vec<(usize, usize)> = p
            .pairs
            .iter()
            .map(|&(l, r)| (seg[l].min(seg[r]), seg[l].max(seg[r])))
            .collect();
        key.sort_unstable();
        *graphs.entry(key).or_default() += pairing_value(fv, &p, alphas, times)?;
    }
    let graph_sum: f64 = graphs.values().map(|v| v.abs()).sum();
    let mut counts = vec![0usize; part.two_m + 1];
    for &s in &seg {
        counts[s] += 1;
    }
    let kfac: f64 = counts.iter().filter(|&&k| k > 0).map(|&k| (k as f64).powf(k as f64 / 2.0)).product();
    let mut total = 0.0;
    for key in graphs.keys() {
        let mut prod = 1.0;
        for &(a, b) in key {
            prod *= pair_bound(fv, part, a, b, bath)?;
        }
        total += prod;
    }
    Ok(GraphCheck {
        exact,
        graph_sum,
        graph_bound: kfac * total,
        graph_count: graphs.len(),
    })
}

/// Counts and worst margins of the trace-inequality suite.
#[derive(Clone, Debug, Serialize)]
pub struct TraceInequalityReport {
    pub samples: usize,
    pub holder_violations: usize,
    pub peierls_violations: usize,
    pub applipeierls_violations: usize,
    pub holder_worst_ratio: f64,
    pub peierls_worst_ratio: f64,
    pub applipeierls_max: f64,
    pub offending: Vec<String>,
}

fn random_hermitian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<C64> {
    let m = DMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    (&m + m.adjoint()) * C64::new(0.5 * scale, 0.0)
}

fn schatten(m: &DMatrix<C64>, p: f64) -> f64 {
    let s = m.clone().singular_values();
    if p.is_infinite() {
        s.iter().copied().fold(0.0, f64::max)
    } else {
        s.iter().map(|x| x.powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

fn expm_hermitian(m: &DMatrix<C64>) -> DMatrix<C64> {
    let (vals, vecs) = hermitian_eigen(m);
    let d = DMatrix::from_fn(vals.len(), vals.len(), |i, j| if i == j { C64::new(vals[i].exp(), 0.0) } else { C64::new(0.0, 0.0) });
    &vecs * d * vecs.adjoint()
}

/// Hölder and Peierls–Bogoliubov on random 4×4 Hermitian matrices, and
/// `tr e^{−βH₀}/tr e^{−βH_λ} ≤ 1` on `fv` across a few couplings.
pub fn trace_inequality_checks(samples: usize, seed: u64, fv: &FiniteVolumeModel, n_max: usize) -> Result<TraceInequalityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = TraceInequalityReport {
        samples,
        holder_violations: 0,
        peierls_violations: 0,
        applipeierls_violations: 0,
        holder_worst_ratio: 0.0,
        peierls_worst_ratio: f64::INFINITY,
        applipeierls_max: 0.0,
        offending: Vec::new(),
    };
    for s in 0..samples {
        let n_fac = rng.gen_range(1..=4usize);
        // exponents with Σ 1/p = 1: random simplex weights, some set to ∞
        let mut w: Vec<f64> = (0..n_fac).map(|_| rng.gen_range(0.05..1.0)).collect();
        if n_fac > 1 && rng.gen_bool(0.3) {
            w[0] = 0.0;
        }
        let tot: f64 = w.iter().sum();
        let ps: Vec<f64> = w.iter().map(|x| if *x == 0.0 { f64::INFINITY } else { tot / x }).collect();
        let mats: Vec<DMatrix<C64>> = (0..n_fac).map(|_| random_hermitian(&mut rng, 4, 2.0)).collect();
        let prod = mats.iter().skip(1).fold(mats[0].clone(), |acc, m| acc * m);
        let lhs = schatten(&prod, 1.0);
        let rhs: f64 = mats.iter().zip(&ps).map(|(m, &p)| schatten(m, p)).product();
        let r = lhs / rhs;
        rep.holder_worst_ratio = rep.holder_worst_ratio.max(r);
        if r > 1.0 + 1e-12 {
            rep.holder_violations += 1;
            rep.offending.push(format!("holder sample {s}: exponents {ps:?}, ratio {r}"));
        }
        let a = random_hermitian(&mut rng, 4, 1.5);
        let b = random_hermitian(&mut rng, 4, 1.5);
        let eb = expm_hermitian(&b);
        let trb = eb.trace().re;
        let lhs = expm_hermitian(&(&a + &b)).trace().re / trb;
        let rhs = ((&a * &eb).trace().re / trb).exp();
        let r = lhs / rhs;
        rep.peierls_worst_ratio = rep.peierls_worst_ratio.min(r);
        if r < 1.0 - 1e-12 {
            rep.peierls_violations += 1;
            rep.offending.push(format!("peierls sample {s}: ratio {r}"));
        }
    }
    for lam in [0.05, 0.1, 0.2, 0.5] {
        let r = partition_ratio(&fv.with_lambda(lam), n_max)?;
        rep.applipeierls_max = rep.applipeierls_max.max(r);
        if r > 1.0 + 1e-12 {
            rep.applipeierls_violations += 1;
            rep.offending.push(format!("partition ratio {r} at lambda {lam}"));
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::pauli;

    #[test]
    fn pairing_counts() {
        assert_eq!(enumerate_pairings(2).unwrap().len(), 1);
        assert_eq!(enumerate_pairings(4).unwrap().len(), 3);
        assert_eq!(enumerate_pairings(6).unwrap().len(), 15);
        assert_eq!(enumerate_pairings(10).unwrap().len(), 945);
        assert!(enumerate_pairings(14).is_err());
        assert!(enumerate_pairings(3).is_err());
    }

    #[test]
    fn propagator_reference_value() {
        let fv = SingleMode::new(3f64.ln());
        let v = propagator(&fv, 0, 0, 0.4, 0.4).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        let bf = brute_force_correlation(&fv, &[0, 0], &[0.4, 0.4], 40).unwrap();
        assert!((bf - 1.0).abs() < 1e-8);
        // KMS periodicity
        let s = 0.7;
        let a = propagator(&fv, 0, 0, 0.0, s).unwrap();
        let b = propagator(&fv, 0, 0, s, fv.beta).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    struct SingleMode;
    impl SingleMode {
        #[allow(clippy::new_ret_no_self)]
        fn new(beta: f64) -> FiniteVolumeModel {
            FiniteVolumeModel::single_mode(1.0, 1.0, beta)
        }
    }

    #[test]
    fn wick_two_point_and_odd() {
        let fv = SingleMode::new(1.3);
        let w = wick_expectation(&fv, &[0, 0], &[0.1, 0.9]).unwrap();
        assert_eq!(w, propagator(&fv, 0, 0, 0.1, 0.9).unwrap());
        assert!(wick_expectation(&fv, &[0, 0, 0], &[0.1, 0.2, 0.3]).is_err());
    }

    #[test]
    fn segment_distance_examples() {
        let p = SegmentPartition::new(4, 8.0).unwrap();
        assert_eq!(segment_distance(&p, 1, 3).unwrap(), (2.0, 2.0, 2.0));
        assert_eq!(segment_distance(&p, 2, 2).unwrap().0, 0.0);
        assert_eq!(segment_distance(&p, 2, 3).unwrap().0, 0.0);
    }

    #[test]
    fn series_examples() {
        assert_eq!(series_bound(0.0).unwrap(), 0.0);
        let partial = 0.1 * (1.0 + 0.1 + 0.01 * 3f64.powf(1.5) / 6.0 + 0.001 * 16.0 / 24.0);
        let s = series_bound(0.1).unwrap();
        assert!((s - partial).abs() < 1e-5, "{s} {partial}");
        let part = SegmentPartition::new(2, 1.0).unwrap();
        let t = graph_bound_term(&[1, 1], 0.1, &part, 2.0, 1.0).unwrap();
        assert!((t - 0.01).abs() < 1e-15);
        assert!((graph_bound_term(&[2], 1.0, &part, 2.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(graph_bound_term(&[1, 3], 0.0, &part, 2.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn atomic_closed_form() {
        let atom = AtomSpec::new(vec![0.0, 1.0]).unwrap();
        let part = SegmentPartition::new(2, 3f64.ln()).unwrap();
        let t = atomic_tail(&atom, &part);
        assert!((t.ratio - 0.25).abs() < 1e-15);
        assert!((t.integral_bound - 2.0 / 3.0 / 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn exact_trace_at_zero_coupling() {
        let atom = AtomSpec::new(vec![0.0, 1.0]).unwrap();
        let c = CouplingTerm::new(pauli::x(), FormFactor::gaussian(0.5, 1.0, 2.0)).unwrap();
        let fv = FiniteVolumeModel::lattice(atom, &[c], 2.0 * PI, 1, 3f64.ln(), 0.0).unwrap();
        assert_eq!(fv.modes.len(), 2);
        assert_eq!(fv.modes[1].multiplicity, 6);
        let q = omega_q_exact(&fv, 3).unwrap();
        assert!((q - 0.25).abs() < 1e-12);
    }
}
