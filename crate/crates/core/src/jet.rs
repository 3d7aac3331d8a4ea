//! Third-order Taylor jets `[f, f', f'', f''']` of real functions of one variable.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet(pub [f64; 4]);

impl Jet {
    pub fn constant(c: f64) -> Self {
        Jet([c, 0.0, 0.0, 0.0])
    }

    pub fn variable(x: f64) -> Self {
        Jet([x, 1.0, 0.0, 0.0])
    }

    pub fn value(&self) -> f64 {
        self.0[0]
    }

    pub fn d(&self, j: usize) -> f64 {
        self.0[j]
    }

    /// `x^a` at `x > 0`, derivatives vanishing exactly for small integer `a`.
    pub fn power(x: f64, a: f64) -> Self {
        let mut out = [0.0; 4];
        let mut coef = 1.0;
        for (k, o) in out.iter_mut().enumerate() {
            *o = if coef == 0.0 { 0.0 } else { coef * x.powf(a - k as f64) };
            coef *= a - k as f64;
        }
        Jet(out)
    }

    /// `e^{-c x}`.
    pub fn exp_decay(x: f64, c: f64) -> Self {
        let e = (-c * x).exp();
        Jet([e, -c * e, c * c * e, -c * c * c * e])
    }

    /// Composition `φ ∘ self` given `[φ(s), φ'(s), φ''(s), φ'''(s)]` at `s = self.value()`.
    pub fn compose(&self, outer: [f64; 4]) -> Self {
        let [_, s1, s2, s3] = self.0;
        Jet([
            outer[0],
            outer[1] * s1,
            outer[2] * s1 * s1 + outer[1] * s2,
            outer[3] * s1 * s1 * s1 + 3.0 * outer[2] * s1 * s2 + outer[1] * s3,
        ])
    }

    /// `self^a` for a positive-valued jet.
    pub fn powf(&self, a: f64) -> Self {
        let s = self.0[0];
        self.compose([
            s.powf(a),
            a * s.powf(a - 1.0),
            a * (a - 1.0) * s.powf(a - 2.0),
            a * (a - 1.0) * (a - 2.0) * s.powf(a - 3.0),
        ])
    }

    pub fn scale(&self, c: f64) -> Self {
        Jet(self.0.map(|v| v * c))
    }

    /// Derivatives with respect to `-x` (reflection `x ↦ -x`).
    pub fn reflect(&self) -> Self {
        Jet([self.0[0], -self.0[1], self.0[2], -self.0[3]])
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2], self.0[3] + o.0[3]])
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let [a0, a1, a2, a3] = self.0;
        let [b0, b1, b2, b3] = o.0;
        Jet([
            a0 * b0,
            a1 * b0 + a0 * b1,
            a2 * b0 + 2.0 * a1 * b1 + a0 * b2,
            a3 * b0 + 3.0 * a2 * b1 + 3.0 * a1 * b2 + a0 * b3,
        ])
    }
}

/// Jet of `q(x) = (1 − e^{−x})/x = ∫₀¹ e^{−xt} dt` for `x ≥ 0`.
pub fn one_minus_exp_over_x(x: f64) -> Jet {
    let mut out = [0.0; 4];
    if x < 4.0 {
        // q^{(n)}(x) = (−1)^n Σ_k (−x)^k / (k! (n+k+1))
        for (n, o) in out.iter_mut().enumerate() {
            let mut term = 1.0;
            let mut sum = 0.0;
            for k in 0..80 {
                let t = term / (n + k + 1) as f64;
                sum += t;
                if t.abs() < 1e-18 * sum.abs() {
                    break;
                }
                term *= -x / (k + 1) as f64;
            }
            *o = if n % 2 == 0 { sum } else { -sum };
        }
    } else {
        // I_n = ∫₀¹ tⁿ e^{−xt} dt, I_n = (n I_{n−1} − e^{−x}) / x
        let e = (-x).exp();
        let mut i = -(-x).exp_m1() / x;
        out[0] = i;
        for n in 1..4 {
            i = (n as f64 * i - e) / x;
            out[n] = if n % 2 == 0 { i } else { -i };
        }
    }
    Jet(out)
}
