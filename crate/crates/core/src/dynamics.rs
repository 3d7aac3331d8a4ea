//! Real-time evolution `e^{−itL_λ}` and ergodic averages.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kms::{interacting_kms_vector, StateVector};
use crate::krylov::{lanczos_expm, KrylovOptions};
use crate::liouvillian::LiouvillianBundle;
use crate::operator::{OperatorMatrix, C64};

pub const EVOLVE_TOL: f64 = 1e-11;

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `(1/t_k) ∫₀^{t_k} values`, trapezoid rule.
    pub cesaro: Vec<f64>,
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,value,cesaro\n");
        for k in 0..self.times.len() {
            s.push_str(&format!("{},{},{}\n", self.times[k], self.values[k], self.cesaro[k]));
        }
        s
    }
}

fn propagate(l: &OperatorMatrix, v: &[C64], t: f64) -> Result<Vec<C64>> {
    let opts = KrylovOptions {
        max_dim: 30,
        tol: EVOLVE_TOL,
        ..Default::default()
    };
    let out = lanczos_expm(l, C64::new(0.0, -t), v, opts, false)?;
    Ok(out.vector)
}

/// `e^{−itL_λ}ψ`.
pub fn evolve(bundle: &LiouvillianBundle, psi: &StateVector, t: f64) -> Result<StateVector> {
    if t == 0.0 {
        return Ok(psi.clone());
    }
    let v = propagate(&bundle.l_lambda(), psi.coeffs(), t)?;
    let out = StateVector::new(v);
    let drift = (out.norm() - psi.norm()).abs();
    if drift > 1e-9 * psi.norm().max(1.0) * t.abs().max(1.0) {
        return Err(Error::Numerical(format!("norm drift {drift:.3e} over time {t}")));
    }
    Ok(out)
}

/// Running trapezoid averages `(1/t_k)∫₀^{t_k} f`; the first entry is `f(t₀)`.
pub fn cesaro_average(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for k in 0..values.len() {
        if k > 0 {
            acc += 0.5 * (values[k] + values[k - 1]) * (times[k] - times[k - 1]);
        }
        let span = times[k] - times[0];
        out.push(if span > 0.0 { acc / span } else { values[k] });
    }
    out
}

/// `⟨ψ(t_k), A ψ(t_k)⟩` along increasing `times` starting at 0.
pub fn heisenberg_expectation(bundle: &LiouvillianBundle, omega_state: &StateVector, a: &OperatorMatrix, times: &[f64]) -> Result<Trajectory> {
    if a.hermiticity_residual() > 1e-10 {
        return Err(Error::Invalid("observable must be Hermitian".into()));
    }
    if times.first().is_some_and(|&t| t != 0.0) {
        return Err(Error::Invalid("times must start at 0".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("times must be strictly increasing".into()));
    }
    let l = bundle.l_lambda();
    let nn = omega_state.norm() * omega_state.norm();
    let mut v = omega_state.coeffs().to_vec();
    let mut values = Vec::with_capacity(times.len());
    let mut prev = 0.0;
    for &t in times {
        if t > prev {
            v = propagate(&l, &v, t - prev)?;
            prev = t;
        }
        values.push(a.expectation(&v).re / nn);
    }
    Ok(Trajectory {
        times: times.to_vec(),
        cesaro: cesaro_average(times, &values),
        values,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RteReport {
    /// `|cesaro(T) − ⟨Ω_{β,λ}, AΩ_{β,λ}⟩|`.
    pub deviation: f64,
    /// Deviation at `T/4, T/2, T`.
    pub trend: Vec<f64>,
    /// `|⟨ψ₀, Aψ₀⟩ − target|`.
    pub initial_deviation: f64,
    pub target: f64,
    /// `2π/Δu` for the smallest grid spacing.
    pub recurrence_time: f64,
    pub trajectory: Trajectory,
}

/// Sampling density of the trajectory used by [`rte_diagnostic`].
pub const RTE_SAMPLES_PER_UNIT: f64 = 5.0;

/// Ergodic-average approach of `⟨A⟩` to its value in `Ω_{β,λ}` up to time `T`.
pub fn rte_diagnostic(bundle: &LiouvillianBundle, initial: &StateVector, a: &OperatorMatrix, t_final: f64) -> Result<RteReport> {
    if !(t_final > 0.0) {
        return Err(Error::Domain(format!("T must be positive, got {t_final}")));
    }
    let omega = interacting_kms_vector(bundle)?;
    let target = omega.expectation(a) / (omega.norm() * omega.norm());
    let n = ((t_final * RTE_SAMPLES_PER_UNIT).ceil() as usize).max(8);
    let n = n.div_ceil(4) * 4;
    let times: Vec<f64> = (0..=n).map(|k| t_final * k as f64 / n as f64).collect();
    let traj = heisenberg_expectation(bundle, initial, a, &times)?;
    let dev = |k: usize| (traj.cesaro[k] - target).abs();
    let trend = vec![dev(n / 4), dev(n / 2), dev(n)];
    Ok(RteReport {
        deviation: dev(n),
        trend,
        initial_deviation: (traj.values[0] - target).abs(),
        target,
        recurrence_time: 2.0 * std::f64::consts::PI / bundle.grid.min_spacing(),
        trajectory: traj,
    })
}
