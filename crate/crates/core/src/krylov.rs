//! Action of matrix exponentials of Hermitian sparse operators on vectors.
//!
//! [`lanczos_expm`] is the usual restarted Krylov scheme with adaptive
//! substeps. [`taylor_expm`] steps with a truncated Taylor polynomial built
//! from sparse products only; every component then carries rounding error
//! relative to its own sources, which keeps `e^{−sK}` accurate when `K` has
//! strongly negative eigenvalues that a global Krylov projection would
//! amplify into noise.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::hermitian_eigen;
use crate::operator::{axpy, inner, norm, OperatorMatrix, C64};

#[derive(Clone, Copy, Debug)]
pub struct KrylovOptions {
    pub max_dim: usize,
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            max_dim: 30,
            tol: 1e-10,
            max_steps: 100_000,
        }
    }
}

/// Result of `e^{zA} v`, stored as `scale_exp·vector` with `vector`
/// normalized whenever the caller asked for rescaling.
#[derive(Clone, Debug)]
pub struct ExpmOutcome {
    pub vector: Vec<C64>,
    /// Natural log of the factor removed by renormalization.
    pub log_scale: f64,
    pub error_estimate: f64,
    pub steps: usize,
    pub matvecs: usize,
}

struct LanczosBasis {
    v: Vec<Vec<C64>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    next_beta: f64,
}

/// Lanczos with full reorthogonalization starting from unit `w`.
fn lanczos(a: &OperatorMatrix, w: &[C64], m: usize) -> LanczosBasis {
    let mut v = vec![w.to_vec()];
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    let mut next_beta = 0.0;
    for j in 0..m {
        let mut r = a.matvec(&v[j]);
        alpha.push(inner(&v[j], &r).re);
        // two passes of classical Gram–Schmidt
        for _ in 0..2 {
            for q in &v {
                let c = inner(q, &r);
                axpy(-c, q, &mut r);
            }
        }
        let b = norm(&r);
        next_beta = b;
        if j + 1 == m || b <= 1e-13 * alpha.iter().map(|x| x.abs()).fold(1e-300, f64::max) {
            break;
        }
        for x in &mut r {
            *x /= b;
        }
        beta.push(b);
        v.push(r);
    }
    LanczosBasis { v, alpha, beta, next_beta }
}

fn tridiagonal(alpha: &[f64], beta: &[f64]) -> DMatrix<C64> {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = C64::new(alpha[i], 0.0);
        if i + 1 < k {
            t[(i, i + 1)] = C64::new(beta[i], 0.0);
            t[(i + 1, i)] = C64::new(beta[i], 0.0);
        }
    }
    t
}

/// Upper bound on the spectral radius (maximum absolute row sum).
pub fn norm_bound(a: &OperatorMatrix) -> f64 {
    (0..a.rows())
        .map(|i| a.row(i).map(|(_, v)| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `e^{zA} v` for Hermitian `A` and complex `z` by restarted Lanczos.
/// With `rescale`, the running vector is renormalized after each substep and
/// the removed factor accumulated in `log_scale`.
pub fn lanczos_expm(a: &OperatorMatrix, z: C64, v: &[C64], opts: KrylovOptions, rescale: bool) -> Result<ExpmOutcome> {
    let mut w = v.to_vec();
    let mut log_scale = 0.0;
    let n0 = norm(&w);
    if n0 == 0.0 || z == C64::new(0.0, 0.0) {
        return Ok(ExpmOutcome {
            vector: w,
            log_scale,
            error_estimate: 0.0,
            steps: 0,
            matvecs: 0,
        });
    }
    let anorm = norm_bound(a).max(1e-300);
    let m = opts.max_dim.min(a.rows()).max(1);
    let mut remaining = 1.0f64;
    let mut delta = (m as f64 / (2.0 * z.norm() * anorm)).min(1.0);
    let mut total_err = 0.0;
    let (mut steps, mut matvecs) = (0usize, 0usize);
    while remaining > 0.0 {
        if steps >= opts.max_steps {
            return Err(Error::Convergence {
                what: "Lanczos exponential (step budget)".into(),
                achieved: total_err,
                target: opts.tol,
            });
        }
        let wn = norm(&w);
        let unit: Vec<C64> = w.iter().map(|x| x / wn).collect();
        let basis = lanczos(a, &unit, m);
        matvecs += basis.alpha.len();
        let t = tridiagonal(&basis.alpha, &basis.beta);
        let k = basis.alpha.len();
        let happy = k < m || basis.next_beta <= 1e-13 * anorm;
        let (vals, vecs) = hermitian_eigen(&t);
        loop {
            let step = delta.min(remaining);
            let mut c = DVector::<C64>::zeros(k);
            for (j, &ev) in vals.iter().enumerate() {
                c += vecs.column(j) * ((z * step * ev).exp() * vecs[(0, j)].conj());
            }
            let cn = c.norm();
            let err = if happy { 0.0 } else { basis.next_beta * c[k - 1].norm() / cn.max(1e-300) };
            if err <= opts.tol * step || happy || step < 1e-14 {
                if err > opts.tol * step && !happy {
                    return Err(Error::Convergence {
                        what: "Lanczos exponential (substep underflow)".into(),
                        achieved: err,
                        target: opts.tol * step,
                    });
                }
                let mut out = vec![C64::new(0.0, 0.0); w.len()];
                for (j, q) in basis.v.iter().enumerate().take(k) {
                    axpy(c[j] * wn, q, &mut out);
                }
                w = out;
                if rescale {
                    let nn = norm(&w);
                    if nn == 0.0 || !nn.is_finite() {
                        return Err(Error::Numerical("exponential action lost all norm".into()));
                    }
                    log_scale += nn.ln();
                    for x in &mut w {
                        *x /= nn;
                    }
                }
                total_err += err;
                remaining -= step;
                steps += 1;
                if err < 0.1 * opts.tol * step {
                    delta = (delta * 1.5).min(1.0);
                }
                break;
            }
            delta = step / 2.0;
        }
    }
    Ok(ExpmOutcome {
        vector: w,
        log_scale,
        error_estimate: total_err,
        steps,
        matvecs,
    })
}

/// `e^{sA} v` for real `s` by Taylor polynomials of degree `order` on
/// substeps with `|h|·‖A‖ ≤ 1`, renormalizing after every substep.
pub fn taylor_expm(a: &OperatorMatrix, s: f64, v: &[C64], order: usize) -> Result<ExpmOutcome> {
    let mut w = v.to_vec();
    let mut log_scale = 0.0;
    let anorm = norm_bound(a);
    if s == 0.0 || anorm == 0.0 {
        return Ok(ExpmOutcome {
            vector: w,
            log_scale,
            error_estimate: 0.0,
            steps: 0,
            matvecs: 0,
        });
    }
    let steps = (s.abs() * anorm).ceil().max(1.0) as usize;
    let h = s / steps as f64;
    let mut matvecs = 0;
    let mut term = vec![C64::new(0.0, 0.0); w.len()];
    let mut tmp = vec![C64::new(0.0, 0.0); w.len()];
    let mut last_term: f64 = 0.0;
    for _ in 0..steps {
        term.copy_from_slice(&w);
        let mut acc = w.clone();
        for k in 1..=order {
            a.matvec_into(&term, &mut tmp);
            matvecs += 1;
            let f = h / k as f64;
            for (t, x) in term.iter_mut().zip(&tmp) {
                *t = x * f;
            }
            axpy(C64::new(1.0, 0.0), &term, &mut acc);
        }
        last_term = last_term.max(norm(&term) / norm(&acc).max(1e-300));
        let nn = norm(&acc);
        if nn == 0.0 || !nn.is_finite() {
            return Err(Error::Numerical("Taylor exponential lost all norm".into()));
        }
        log_scale += nn.ln();
        for x in &mut acc {
            *x /= nn;
        }
        w = acc;
    }
    Ok(ExpmOutcome {
        vector: w,
        log_scale,
        error_estimate: last_term,
        steps,
        matvecs,
    })
}

/// MINRES for `(A − σ)x = b` with Hermitian `A`. Returns `(x, relative residual, iterations)`.
pub fn minres(a: &OperatorMatrix, shift: f64, b: &[C64], tol: f64, max_iter: usize) -> (Vec<C64>, f64, usize) {
    let n = b.len();
    let zero = C64::new(0.0, 0.0);
    let mut x = vec![zero; n];
    let beta1 = norm(b);
    if beta1 == 0.0 {
        return (x, 0.0, 0);
    }
    let mut r1 = b.to_vec();
    let mut r2 = b.to_vec();
    let mut y = b.to_vec();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar): (f64, f64, f64) = (0.0, 0.0, beta1);
    let (mut cs, mut sn): (f64, f64) = (-1.0, 0.0);
    let mut w = vec![zero; n];
    let mut w2 = vec![zero; n];
    let mut v = vec![zero; n];
    let mut it = 0;
    while it < max_iter {
        it += 1;
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = yi / beta;
        }
        y = a.matvec(&v);
        axpy(C64::new(-shift, 0.0), &v, &mut y);
        if it >= 2 {
            axpy(C64::new(-beta / oldb, 0.0), &r1, &mut y);
        }
        let alfa = inner(&v, &y).re;
        axpy(C64::new(-alfa / beta, 0.0), &r2, &mut y);
        r1 = std::mem::replace(&mut r2, y.clone());
        oldb = beta;
        beta = norm(&y);
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let w1 = std::mem::replace(&mut w2, w.clone());
        for k in 0..n {
            w[k] = (v[k] - oldeps * w1[k] - delta * w2[k]) / gamma;
        }
        axpy(C64::new(phi, 0.0), &w, &mut x);
        if phibar <= tol * beta1 || beta == 0.0 {
            break;
        }
    }
    // true residual
    let mut r = a.matvec(&x);
    axpy(C64::new(-shift, 0.0), &x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    (x, norm(&r) / beta1, it)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_function_apply;

    fn random_hermitian(n: usize, seed: u64) -> OperatorMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, C64::new(rng.gen_range(-3.0..3.0), 0.0)));
            for j in (i + 1)..n {
                if rng.gen_bool(0.3) {
                    let z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    t.push((i, j, z));
                    t.push((j, i, z.conj()));
                }
            }
        }
        OperatorMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn minres_solves_indefinite_system() {
        let a = random_hermitian(50, 3);
        let b: Vec<C64> = (0..50).map(|k| C64::new(1.0, (k as f64).cos())).collect();
        let (x, rel, _) = minres(&a, 0.123, &b, 1e-13, 2000);
        assert!(rel < 1e-10, "{rel}");
        let mut r = a.matvec(&x);
        axpy(C64::new(-0.123, 0.0), &x, &mut r);
        let err: f64 = r.iter().zip(&b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-9);
    }

    #[test]
    fn unitary_step_matches_dense() {
        let a = random_hermitian(60, 1);
        let v: Vec<C64> = (0..60).map(|k| C64::new((k as f64).sin(), 0.1 * k as f64)).collect();
        let out = lanczos_expm(&a, C64::new(0.0, -2.5), &v, KrylovOptions::default(), false).unwrap();
        let dense = hermitian_function_apply(&a.to_dense(), &v, |x| C64::new(0.0, -2.5 * x).exp());
        let err: f64 = out.vector.iter().zip(&dense).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-9 * norm(&v), "{err}");
    }

    #[test]
    fn taylor_and_lanczos_agree_for_real_exponent() {
        let a = random_hermitian(40, 2);
        let v: Vec<C64> = (0..40).map(|k| C64::new(1.0 / (k + 1) as f64, 0.0)).collect();
        let t = taylor_expm(&a, -1.5, &v, 24).unwrap();
        let l = lanczos_expm(&a, C64::new(-1.5, 0.0), &v, KrylovOptions::default(), true).unwrap();
        let dense = hermitian_function_apply(&a.to_dense(), &v, |x| C64::new((-1.5 * x).exp(), 0.0));
        let dn = norm(&dense);
        for out in [t, l] {
            assert!((out.log_scale - dn.ln()).abs() < 1e-10);
            let err: f64 = out.vector.iter().zip(&dense).map(|(x, y)| (x - y / dn).norm_sqr()).sum::<f64>().sqrt();
            assert!(err < 1e-10, "{err}");
        }
    }
}
