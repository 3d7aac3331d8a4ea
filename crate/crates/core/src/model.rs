//! Physical model: atom, couplings, form factors and the glued thermal map.
//!
//! Form factors are angle independent, `g(u) = u^p · g̃(u)` with
//! `g̃(u) = e^{iφ₀} · profile(u)` and a real radial profile. The glued map is
//!
//! ```text
//! τ(u) = e^{iφ₀}       R(u)               u > 0
//! τ(u) = e^{i(φ−φ₀)}   e^{−β|u|/2} R(|u|)  u < 0
//! R(v) = v^{1+p} (1 − e^{−βv})^{−1/2} profile(v)
//! ```
//!
//! and `R` is evaluated as `β^{−1/2} v^{1/2+p} q(βv)^{−1/2} profile(v)` with
//! `q(x) = (1 − e^{−x})/x`, which keeps every derivative accurate as `v → 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::jet::{one_minus_exp_over_x, Jet};
use crate::operator::C64;
use crate::quad::integrate_half_line;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomSpec {
    pub energies: Vec<f64>,
}

impl AtomSpec {
    pub fn new(energies: Vec<f64>) -> Result<Self> {
        if energies.len() < 2 {
            return Err(Error::Invalid("atom needs at least two levels".into()));
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::Invalid("atomic energies must be finite".into()));
        }
        if energies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("atomic energies must be strictly increasing".into()));
        }
        Ok(Self { energies })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// Spectral gap `E₁ − E₀`.
    pub fn gap(&self) -> f64 {
        self.energies[1] - self.energies[0]
    }
}

/// Radial profile families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    /// `c·e^{−(u/Λ)²}`; an infinite cutoff gives the constant `c`.
    Gaussian { amplitude: f64, cutoff: f64 },
    /// `c·e^{−u/Λ}` (nonzero slope at the origin).
    Exponential { amplitude: f64, cutoff: f64 },
    /// Piecewise-linear table; values only, no derivatives.
    Tabulated { nodes: Vec<f64>, values: Vec<f64> },
}

impl Profile {
    pub fn gaussian(amplitude: f64, cutoff: f64) -> Self {
        Profile::Gaussian { amplitude, cutoff }
    }

    fn jet(&self, v: f64) -> Result<Jet> {
        match *self {
            Profile::Gaussian { amplitude: c, cutoff } => {
                if cutoff.is_infinite() {
                    return Ok(Jet::constant(c));
                }
                let a = 1.0 / (cutoff * cutoff);
                let f = c * (-a * v * v).exp();
                Ok(Jet([
                    f,
                    -2.0 * a * v * f,
                    (4.0 * a * a * v * v - 2.0 * a) * f,
                    (-8.0 * a * a * a * v * v * v + 12.0 * a * a * v) * f,
                ]))
            }
            Profile::Exponential { amplitude: c, cutoff } => Ok(Jet::exp_decay(v, 1.0 / cutoff).scale(c)),
            Profile::Tabulated { .. } => Err(Error::Unsupported(
                "derivatives of tabulated profiles are not available".into(),
            )),
        }
    }

    fn value(&self, v: f64) -> f64 {
        match self {
            Profile::Tabulated { nodes, values } => {
                if nodes.is_empty() || v < nodes[0] || v > *nodes.last().unwrap() {
                    return 0.0;
                }
                let k = nodes.partition_point(|&x| x <= v).clamp(1, nodes.len() - 1);
                if nodes.len() == 1 {
                    return values[0];
                }
                let (x0, x1) = (nodes[k - 1], nodes[k]);
                let t = (v - x0) / (x1 - x0);
                values[k - 1] * (1.0 - t) + values[k] * t
            }
            _ => self.jet(v).map(|j| j.value()).unwrap_or(f64::NAN),
        }
    }

    /// Natural length scale in `u`, used to place quadrature breakpoints.
    pub fn scale(&self) -> f64 {
        match self {
            Profile::Gaussian { cutoff, .. } | Profile::Exponential { cutoff, .. } => {
                if cutoff.is_finite() {
                    *cutoff
                } else {
                    1.0
                }
            }
            Profile::Tabulated { nodes, .. } => nodes.last().copied().unwrap_or(1.0).max(1e-3),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Profile::Gaussian { amplitude, .. } | Profile::Exponential { amplitude, .. } => *amplitude == 0.0,
            Profile::Tabulated { values, .. } => values.iter().all(|&v| v == 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormFactor {
    pub p: f64,
    pub profile: Profile,
    #[serde(default)]
    pub phase0: f64,
    #[serde(default = "default_angular")]
    pub angular_factor: f64,
}

fn default_angular() -> f64 {
    4.0 * PI
}

impl FormFactor {
    pub fn new(p: f64, profile: Profile) -> Self {
        Self {
            p,
            profile,
            phase0: 0.0,
            angular_factor: 4.0 * PI,
        }
    }

    pub fn gaussian(p: f64, amplitude: f64, cutoff: f64) -> Self {
        Self::new(p, Profile::gaussian(amplitude, cutoff))
    }

    /// `g̃(u) = e^{iφ₀}·profile(u)`.
    pub fn g_tilde(&self, u: f64) -> C64 {
        C64::from_polar(1.0, self.phase0) * self.profile.value(u)
    }

    /// `g(u) = u^p g̃(u)` for `u > 0`.
    pub fn g(&self, u: f64) -> C64 {
        self.g_tilde(u) * u.powf(self.p)
    }

    /// Whether `p` is one of the admissible infrared classes.
    pub fn p_class_ok(&self) -> bool {
        [-0.5, 0.5, 1.5].iter().any(|&q| (self.p - q).abs() < 1e-12) || self.p > 2.0
    }

    fn profile_value_jet(&self, v: f64) -> Result<Jet> {
        match self.profile {
            Profile::Tabulated { .. } => Ok(Jet::constant(self.profile.value(v))),
            _ => self.profile.jet(v),
        }
    }

    /// Jet of `R(v)` (see module docs) at `v > 0`.
    fn r_jet(&self, beta: f64, v: f64, need_derivs: bool) -> Result<Jet> {
        let prof = if need_derivs {
            self.profile.jet(v)?
        } else {
            self.profile_value_jet(v)?
        };
        let q = one_minus_exp_over_x(beta * v);
        // d/dv = β d/dx
        let q = Jet([q.0[0], beta * q.0[1], beta * beta * q.0[2], beta * beta * beta * q.0[3]]);
        let r = Jet::power(v, 0.5 + self.p) * q.powf(-0.5) * prof;
        Ok(r.scale(beta.powf(-0.5)))
    }
}

/// Jet (in `u`) of `e^{−wβu/2}·τ(u)` for `w ∈ {0, 1}`.
fn glued_jet(ff: &FormFactor, beta: f64, phi: f64, u: f64, weighted: bool, need_derivs: bool) -> Result<[C64; 4]> {
    if u == 0.0 || !u.is_finite() {
        return Err(Error::Domain(format!("glued map evaluated at u = {u}")));
    }
    let v = u.abs();
    let r = ff.r_jet(beta, v, need_derivs)?;
    let (phase, jet) = if u > 0.0 {
        let j = if weighted { r * Jet::exp_decay(v, beta / 2.0) } else { r };
        (C64::from_polar(1.0, ff.phase0), j)
    } else {
        // e^{−βv/2} from the negative branch cancels against e^{+βv/2} of the weight
        let j = if weighted { r } else { r * Jet::exp_decay(v, beta / 2.0) };
        (C64::from_polar(1.0, phi - ff.phase0), j.reflect())
    };
    Ok(jet.0.map(|x| phase * x))
}

/// `τ_β(g)(u)`.
pub fn tau_beta(ff: &FormFactor, beta: f64, phi: f64, u: f64) -> Result<C64> {
    Ok(glued_jet(ff, beta, phi, u, false, false)?[0])
}

/// `∂_u^j τ_β(g)(u)` for `j ∈ {1, 2, 3}`.
pub fn d_tau_beta(ff: &FormFactor, beta: f64, phi: f64, u: f64, order: usize) -> Result<C64> {
    if !(1..=3).contains(&order) {
        return Err(Error::Invalid(format!("derivative order {order} not in 1..=3")));
    }
    Ok(glued_jet(ff, beta, phi, u, false, true)?[order])
}

/// `e^{−βu/2}·τ_β(g)(u)`, the second-copy smearing function.
pub fn tau_beta_weighted(ff: &FormFactor, beta: f64, phi: f64, u: f64) -> Result<C64> {
    Ok(glued_jet(ff, beta, phi, u, true, false)?[0])
}

/// `∂_u^j (e^{−βu/2}·τ_β(g))(u)`.
pub fn d_tau_beta_weighted(ff: &FormFactor, beta: f64, phi: f64, u: f64, order: usize) -> Result<C64> {
    if !(1..=3).contains(&order) {
        return Err(Error::Invalid(format!("derivative order {order} not in 1..=3")));
    }
    Ok(glued_jet(ff, beta, phi, u, true, true)?[order])
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingTerm {
    pub g: DMatrix<C64>,
    pub ff: FormFactor,
}

impl CouplingTerm {
    pub fn new(g: DMatrix<C64>, ff: FormFactor) -> Result<Self> {
        if !g.is_square() {
            return Err(Error::Invalid("coupling matrix must be square".into()));
        }
        let scale = g.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let defect = (&g - g.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if defect > 1e-12 * scale.max(1e-300) && scale > 0.0 {
            return Err(Error::Invalid(format!("coupling matrix not Hermitian (defect {defect:.3e})")));
        }
        if g.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Invalid("coupling matrix has non-finite entries".into()));
        }
        Ok(Self { g, ff })
    }

    /// Operator norm `‖G‖`.
    pub fn norm(&self) -> f64 {
        self.g.clone().symmetric_eigenvalues().iter().map(|e| e.abs()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub atom: AtomSpec,
    pub couplings: Vec<CouplingTerm>,
    pub beta: f64,
    pub lambda: f64,
    /// Expert override of the glue phase; `None` applies the infrared rule.
    pub glue_override: Option<f64>,
}

impl ModelSpec {
    pub fn new(atom: AtomSpec, couplings: Vec<CouplingTerm>, beta: f64, lambda: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Invalid(format!("beta must be positive and finite, got {beta}")));
        }
        if !lambda.is_finite() {
            return Err(Error::Invalid("lambda must be finite".into()));
        }
        for (a, c) in couplings.iter().enumerate() {
            if c.g.nrows() != atom.dim() {
                return Err(Error::Invalid(format!(
                    "coupling {a} has size {} but the atom has {} levels",
                    c.g.nrows(),
                    atom.dim()
                )));
            }
        }
        Ok(Self {
            atom,
            couplings,
            beta,
            lambda,
            glue_override: None,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta, ..self.clone() }
    }

    /// Scales every coupling matrix by `s`.
    pub fn with_scaled_couplings(&self, s: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.couplings {
            c.g *= C64::new(s, 0.0);
        }
        out
    }

    /// Glue phase: `2φ₀` for `p = −1/2`, `π + 2φ₀` otherwise.
    pub fn glue_phase(&self) -> f64 {
        if let Some(phi) = self.glue_override {
            return phi;
        }
        match self.couplings.first() {
            Some(c) if (c.ff.p + 0.5).abs() < 1e-12 => 2.0 * c.ff.phase0,
            Some(c) => PI + 2.0 * c.ff.phase0,
            None => PI,
        }
    }

    pub fn dim(&self) -> usize {
        self.atom.dim()
    }

    /// `C′ = Σ_α ‖G_α‖`.
    pub fn coupling_norm_sum(&self) -> f64 {
        self.couplings.iter().map(|c| c.norm()).sum()
    }

    pub fn tau(&self, alpha: usize, u: f64) -> Result<C64> {
        tau_beta(&self.couplings[alpha].ff, self.beta, self.glue_phase(), u)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: String, passed: bool, value: f64, detail: impl Into<String>) {
        self.passed &= passed;
        self.checks.push(Check {
            name,
            passed,
            value,
            detail: detail.into(),
        });
    }
}

const NORM_TOL: f64 = 1e-9;

/// `∫₀^∞ f` as a norm square, with a failure message when it is not finite.
fn half_line_norm(f: impl Fn(f64) -> f64, scale: f64) -> (f64, bool, String) {
    let r = integrate_half_line(f, scale, NORM_TOL);
    if r.value.is_finite() && r.converged {
        (r.value.max(0.0).sqrt(), true, String::new())
    } else {
        (
            f64::INFINITY,
            false,
            format!("quadrature not finite (partial value {:.6e}, error {:.3e})", r.value, r.error),
        )
    }
}

fn jump_is_small(ff: &FormFactor, beta: f64, phi: f64, order: usize, scale: f64) -> Result<(bool, f64)> {
    let jump = |h: f64| -> Result<(f64, f64)> {
        let a = glued_jet(ff, beta, phi, h, false, true)?[order];
        let b = glued_jet(ff, beta, phi, -h, false, true)?[order];
        Ok(((a - b).norm(), a.norm().max(b.norm())))
    };
    let h = 1e-4 * scale.min(1.0 / beta);
    let (j1, m1) = jump(h)?;
    let (j2, _) = jump(h / 10.0)?;
    if !j1.is_finite() || !j2.is_finite() {
        return Ok((false, f64::INFINITY));
    }
    if j1 <= 1e-9 * (1.0 + m1) {
        return Ok((true, j1));
    }
    Ok((j2 <= 0.5 * j1, j2))
}

/// Checks the smoothness, decay, phase and continuity conditions on every
/// coupling. Non-finite quadratures become failed checks, never errors.
pub fn validate_a1(spec: &ModelSpec) -> ValidationReport {
    let mut rep = ValidationReport {
        checks: Vec::new(),
        passed: true,
    };
    let beta = spec.beta;
    let phi = spec.glue_phase();
    if let Some(first) = spec.couplings.first() {
        let common = spec
            .couplings
            .iter()
            .all(|c| (c.ff.phase0 - first.ff.phase0).abs() < 1e-12 && (c.ff.p - first.ff.p).abs() < 1e-12);
        rep.push("common p and phase0".into(), common, first.ff.phase0, "");
        if spec.glue_override.is_none() {
            rep.push("glue phase rule".into(), true, phi, format!("phi = {phi:.12}"));
        } else {
            rep.push("glue phase rule".into(), true, phi, "expert override in effect");
        }
    }
    for (a, c) in spec.couplings.iter().enumerate() {
        let ff = &c.ff;
        let scale = ff.profile.scale();
        let tag = |s: &str| format!("alpha{a}: {s}");
        rep.push(tag("p class"), ff.p_class_ok(), ff.p, "p must be -1/2, 1/2, 3/2 or > 2");
        if ff.profile.is_zero() {
            for s in [
                "d0 gtilde norm",
                "d1 gtilde norm",
                "d2 gtilde norm",
                "d3 gtilde norm",
                "u^2 g norm",
                "d0 tau norm",
                "d1 tau norm",
                "d2 tau norm",
                "d3 tau norm",
                "continuity at 0",
            ] {
                rep.push(tag(s), true, 0.0, "zero profile");
            }
            continue;
        }
        let derivs_ok = !matches!(ff.profile, Profile::Tabulated { .. });
        let ang = ff.angular_factor;
        for j in 0..4 {
            if !derivs_ok && j > 0 {
                rep.push(tag(&format!("d{j} gtilde norm")), false, f64::NAN, "tabulated profile has no derivatives");
                continue;
            }
            let (n, ok, msg) = half_line_norm(
                |v| {
                    let d = if derivs_ok {
                        ff.profile.jet(v).map(|jt| jt.d(j)).unwrap_or(f64::NAN)
                    } else {
                        ff.profile.value(v)
                    };
                    ang * d * d * v * v
                },
                scale,
            );
            rep.push(tag(&format!("d{j} gtilde norm")), ok, n, msg);
        }
        let (n, ok, msg) = half_line_norm(
            |v| {
                let g = ff.profile.value(v) * v.powf(2.0 + ff.p);
                ang * g * g * v * v
            },
            scale,
        );
        rep.push(tag("u^2 g norm"), ok, n, msg);
        if derivs_ok {
            let small = 1e-9 * scale;
            let j0 = ff.profile.jet(small).unwrap();
            let lim: Vec<C64> = (0..3).map(|j| C64::from_polar(1.0, ff.phase0) * j0.d(j)).collect();
            if (ff.p + 0.5).abs() < 1e-12 || (ff.p - 0.5).abs() < 1e-12 {
                let slope = lim[1].norm();
                let ok = slope <= 1e-6 * (1.0 + lim[0].norm());
                rep.push(tag("d gtilde(0) = 0"), ok, slope, if ok { "" } else { "nonzero slope at the origin" });
            }
            let imag = lim
                .iter()
                .map(|z| (z * C64::from_polar(1.0, -ff.phase0)).im.abs())
                .fold(0.0, f64::max);
            rep.push(tag("phase0 reality"), imag <= 1e-12 * (1.0 + lim[0].norm()), imag, "");
        }
        for j in 0..4 {
            if !derivs_ok && j > 0 {
                rep.push(tag(&format!("d{j} tau norm")), false, f64::NAN, "tabulated profile has no derivatives");
                continue;
            }
            let (n, ok, msg) = half_line_norm(
                |v| {
                    let p = glued_jet(ff, beta, phi, v, false, derivs_ok);
                    let m = glued_jet(ff, beta, phi, -v, false, derivs_ok);
                    match (p, m) {
                        (Ok(p), Ok(m)) => ang * (p[j].norm_sqr() + m[j].norm_sqr()),
                        _ => f64::NAN,
                    }
                },
                scale,
            );
            rep.push(tag(&format!("d{j} tau norm")), ok, n, msg);
        }
        if derivs_ok {
            let mut all = true;
            let mut worst: f64 = 0.0;
            for j in 0..3 {
                match jump_is_small(ff, beta, phi, j, scale) {
                    Ok((ok, jmp)) => {
                        all &= ok;
                        if !ok {
                            worst = worst.max(jmp);
                        }
                    }
                    Err(_) => all = false,
                }
            }
            rep.push(tag("continuity at 0"), all, worst, if all { "" } else { "derivative jumps at u = 0" });
        } else {
            rep.push(tag("continuity at 0"), false, f64::NAN, "tabulated profile has no derivatives");
        }
    }
    rep
}

/// `min_{E_m≠E_n} angular·|Σ_α ⟨φ_m, G_α φ_n⟩ g_α(|E_m − E_n|)|²` over ordered pairs.
pub fn fgr_value(spec: &ModelSpec) -> f64 {
    let e = &spec.atom.energies;
    let d = e.len();
    let mut best = f64::INFINITY;
    for m in 0..d {
        for n in 0..d {
            if e[m] == e[n] {
                continue;
            }
            let w = (e[m] - e[n]).abs();
            let mut s = C64::new(0.0, 0.0);
            let mut ang = 4.0 * PI;
            for c in &spec.couplings {
                s += c.g[(m, n)] * c.ff.g(w);
                ang = c.ff.angular_factor;
            }
            best = best.min(ang * s.norm_sqr());
        }
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

/// `2 Σ_α ‖G_α‖·‖∂_u τ_β(g_α)‖_{L²(ℝ×S²)}`.
pub fn c_p_beta(spec: &ModelSpec) -> Result<f64> {
    let phi = spec.glue_phase();
    let mut total = 0.0;
    for (a, c) in spec.couplings.iter().enumerate() {
        let gn = c.norm();
        if gn == 0.0 || c.ff.profile.is_zero() {
            continue;
        }
        let ff = &c.ff;
        // make sure the profile supports derivatives before integrating
        glued_jet(ff, spec.beta, phi, 1.0, false, true)?;
        let r = integrate_half_line(
            |v| {
                let p = glued_jet(ff, spec.beta, phi, v, false, true).map(|j| j[1].norm_sqr()).unwrap_or(f64::NAN);
                let m = glued_jet(ff, spec.beta, phi, -v, false, true).map(|j| j[1].norm_sqr()).unwrap_or(f64::NAN);
                ff.angular_factor * (p + m)
            },
            ff.profile.scale(),
            NORM_TOL,
        );
        if !(r.converged && r.value.is_finite()) {
            return Err(Error::Convergence {
                what: format!("derivative norm quadrature for coupling {a} (partial total {total:.6e})"),
                achieved: r.error,
                target: NORM_TOL * r.value.abs(),
            });
        }
        total += 2.0 * gn * r.value.sqrt();
    }
    Ok(total)
}

/// Normalized Boltzmann weights `e^{−βE_j}/Z`, shifted by `E₀` against overflow.
pub fn gibbs_weights(atom: &AtomSpec, beta: f64) -> Vec<f64> {
    let e0 = atom.energies[0];
    let w: Vec<f64> = atom.energies.iter().map(|e| (-beta * (e - e0)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

pub fn gibbs_density(atom: &AtomSpec, beta: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_vec(gibbs_weights(atom, beta)))
}

/// Unit purification `Σ_j √p_j φ_j⊗φ_j` in the ordering `i·d + j`.
pub fn gibbs_vector(atom: &AtomSpec, beta: f64) -> DVector<C64> {
    let d = atom.dim();
    let mut v = DVector::zeros(d * d);
    for (j, p) in gibbs_weights(atom, beta).into_iter().enumerate() {
        v[j * d + j] = C64::new(p.sqrt(), 0.0);
    }
    v
}

/// Pauli matrices as complex matrices.
pub mod pauli {
    use super::*;

    pub fn x() -> DMatrix<C64> {
        DMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)])
    }

    pub fn y() -> DMatrix<C64> {
        DMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), C64::new(0.0, 0.0)])
    }

    pub fn z() -> DMatrix<C64> {
        DMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(-1.0, 0.0)])
    }
}

/// Two-level atom `E = (0, gap)` coupled through one term.
pub fn spin_boson(gap: f64, g: DMatrix<C64>, ff: FormFactor, beta: f64, lambda: f64) -> Result<ModelSpec> {
    ModelSpec::new(AtomSpec::new(vec![0.0, gap])?, vec![CouplingTerm::new(g, ff)?], beta, lambda)
}
