//! Symmetric frequency grids and the total-occupation truncated Fock space.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::hermitian_eigen;
use crate::operator::{OperatorMatrix, C64};

/// Default cap on the number of Fock states.
pub const DEFAULT_STATE_BUDGET: usize = 2_000_000;

/// Discrete modes `u_1 < … < u_M` with quadrature weights.
#[derive(Clone, Debug, PartialEq)]
pub struct BathGrid {
    modes: Vec<f64>,
    weights: Vec<f64>,
}

impl BathGrid {
    /// Mirrors positive nodes/weights to a symmetric grid.
    pub fn from_positive(nodes: &[f64], weights: &[f64]) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::Invalid("grid needs matching, non-empty nodes and weights".into()));
        }
        if nodes.iter().any(|&u| !(u > 0.0 && u.is_finite())) || weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Invalid("grid nodes and weights must be positive and finite".into()));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("positive grid nodes must be strictly increasing".into()));
        }
        let mut modes: Vec<f64> = nodes.iter().rev().map(|u| -u).collect();
        modes.extend_from_slice(nodes);
        let mut w: Vec<f64> = weights.iter().rev().copied().collect();
        w.extend_from_slice(weights);
        Ok(Self { modes, weights: w })
    }

    /// Midpoint grid `±(k − 1/2)Δu`, `k = 1..M/2`, `Δu = 2 u_max / M`.
    pub fn uniform(u_max: f64, m: usize) -> Result<Self> {
        if m == 0 || !m.is_multiple_of(2) {
            return Err(Error::Invalid(format!("mode count must be even and positive, got {m}")));
        }
        if !(u_max > 0.0) {
            return Err(Error::Invalid("u_max must be positive".into()));
        }
        let half = m / 2;
        let du = u_max / half as f64;
        let nodes: Vec<f64> = (1..=half).map(|k| (k as f64 - 0.5) * du).collect();
        Self::from_positive(&nodes, &vec![du; half])
    }

    /// Midpoint cells of `[lo, hi]` (and the mirror), `M/2` of them. Used for
    /// baths that only need to resolve frequencies near the Bohr frequencies.
    pub fn band(lo: f64, hi: f64, m: usize) -> Result<Self> {
        if m == 0 || !m.is_multiple_of(2) {
            return Err(Error::Invalid(format!("mode count must be even and positive, got {m}")));
        }
        if !(0.0 <= lo && lo < hi && hi.is_finite()) {
            return Err(Error::Invalid(format!("need 0 <= lo < hi, got [{lo}, {hi}]")));
        }
        let half = m / 2;
        let du = (hi - lo) / half as f64;
        let nodes: Vec<f64> = (0..half).map(|k| lo + (k as f64 + 0.5) * du).collect();
        Self::from_positive(&nodes, &vec![du; half])
    }

    /// Cells `[0, e₁], [e₁, e₂], …` with geometrically growing edges from
    /// `first_edge` to `u_max`; nodes at cell midpoints.
    pub fn geometric(first_edge: f64, u_max: f64, m: usize) -> Result<Self> {
        if m < 4 || !m.is_multiple_of(2) {
            return Err(Error::Invalid(format!("geometric grid needs an even mode count ≥ 4, got {m}")));
        }
        if !(first_edge > 0.0 && first_edge < u_max) {
            return Err(Error::Invalid("need 0 < first_edge < u_max".into()));
        }
        let half = m / 2;
        let ratio = (u_max / first_edge).powf(1.0 / (half - 1) as f64);
        let mut edges = vec![0.0];
        for k in 0..half {
            edges.push(first_edge * ratio.powi(k as i32));
        }
        *edges.last_mut().unwrap() = u_max;
        let nodes: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let weights: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
        Self::from_positive(&nodes, &weights)
    }

    pub fn modes(&self) -> &[f64] {
        &self.modes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Grid of the `u > 0` modes only.
    pub fn positive_part(&self) -> (Vec<f64>, Vec<f64>) {
        let k = self.modes.len() / 2;
        (self.modes[k..].to_vec(), self.weights[k..].to_vec())
    }

    /// Smallest spacing between neighbouring positive modes (sets the recurrence time).
    pub fn min_spacing(&self) -> f64 {
        self.modes.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// Permutes the mode labels (for invariance tests). Breaks the sorted
    /// invariant, so only [`discretize`] and operator assembly accept it.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            modes: perm.iter().map(|&i| self.modes[i]).collect(),
            weights: perm.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    pub fn hash(&self) -> [u8; 8] {
        let mut h = Sha256::new();
        for (u, w) in self.modes.iter().zip(&self.weights) {
            h.update(u.to_le_bytes());
            h.update(w.to_le_bytes());
        }
        let d = h.finalize();
        let mut out = [0u8; 8];
        out.copy_from_slice(&d[..8]);
        out
    }
}

/// Occupation-number basis with `Σ n_j ≤ n_total_max`, in lexicographic order.
#[derive(Clone, Debug)]
pub struct FockBasis {
    mode_count: usize,
    n_total_max: usize,
    states: Vec<Vec<u16>>,
    index: HashMap<Vec<u16>, usize>,
    // raise[s·M + j] = index of s + e_j, or usize::MAX past the cutoff
    raise: Vec<usize>,
}

fn binom(n: u64, k: u64) -> u128 {
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

/// `Σ_{k=0}^{n} C(M+k−1, k) = C(M+n, n)`.
pub fn basis_dimension(m: usize, n_total_max: usize) -> u128 {
    binom((m + n_total_max) as u64, n_total_max.min(m) as u64)
}

pub fn enumerate_basis(m: usize, n_total_max: usize) -> Result<FockBasis> {
    enumerate_basis_with_budget(m, n_total_max, DEFAULT_STATE_BUDGET)
}

pub fn enumerate_basis_with_budget(m: usize, n_total_max: usize, budget: usize) -> Result<FockBasis> {
    if m == 0 {
        return Err(Error::Invalid("Fock space needs at least one mode".into()));
    }
    let dim = basis_dimension(m, n_total_max);
    if dim > budget as u128 {
        return Err(Error::Budget {
            what: format!("Fock basis (M={m}, n_max={n_total_max})"),
            dim: dim.min(usize::MAX as u128) as usize,
            limit: budget,
        });
    }
    let mut states = Vec::with_capacity(dim as usize);
    let mut cur = vec![0u16; m];
    fill(&mut states, &mut cur, 0, n_total_max);
    let index: HashMap<Vec<u16>, usize> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let mut raise = vec![usize::MAX; states.len() * m];
    for (i, s) in states.iter().enumerate() {
        let tot: usize = s.iter().map(|&n| n as usize).sum();
        if tot >= n_total_max {
            continue;
        }
        let mut t = s.clone();
        for j in 0..m {
            t[j] += 1;
            raise[i * m + j] = index[&t];
            t[j] -= 1;
        }
    }
    Ok(FockBasis {
        mode_count: m,
        n_total_max,
        states,
        index,
        raise,
    })
}

fn fill(out: &mut Vec<Vec<u16>>, cur: &mut Vec<u16>, pos: usize, remaining: usize) {
    if pos == cur.len() {
        out.push(cur.clone());
        return;
    }
    for n in 0..=remaining {
        cur[pos] = n as u16;
        fill(out, cur, pos + 1, remaining - n);
    }
    cur[pos] = 0;
}

impl FockBasis {
    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn mode_count(&self) -> usize {
        self.mode_count
    }

    pub fn n_total_max(&self) -> usize {
        self.n_total_max
    }

    pub fn states(&self) -> &[Vec<u16>] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[u16] {
        &self.states[i]
    }

    pub fn index_of(&self, occ: &[u16]) -> Option<usize> {
        self.index.get(occ).copied()
    }

    pub fn total(&self, i: usize) -> usize {
        self.states[i].iter().map(|&n| n as usize).sum()
    }

    /// Index of `a†_j |s⟩` (up to its √(n+1) factor), if below the cutoff.
    pub fn raised(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.raise[i * self.mode_count + j];
        (r != usize::MAX).then_some(r)
    }
}

/// Discretized one-boson vector, `Σ|c_j|² ≈ angular·∫|h|²`.
#[derive(Clone, Debug, PartialEq)]
pub struct OneBosonVector {
    pub coeffs: Vec<C64>,
}

impl OneBosonVector {
    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// `c_j = √(angular·w_j)·f(u_j)`.
pub fn discretize<F>(f: F, grid: &BathGrid, angular_factor: f64) -> Result<OneBosonVector>
where
    F: Fn(f64) -> Result<C64>,
{
    let mut coeffs = Vec::with_capacity(grid.len());
    for (&u, &w) in grid.modes().iter().zip(grid.weights()) {
        let v = f(u)?;
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::Numerical(format!("non-finite smearing function at u = {u}")));
        }
        coeffs.push((angular_factor * w).sqrt() * v);
    }
    Ok(OneBosonVector { coeffs })
}

/// `a†(h)`, linear in `h`.
pub fn creation(basis: &FockBasis, h: &OneBosonVector) -> OperatorMatrix {
    assert_eq!(h.coeffs.len(), basis.mode_count(), "smearing vector length differs from mode count");
    let mut t = Vec::new();
    for i in 0..basis.dim() {
        for (j, &c) in h.coeffs.iter().enumerate() {
            if c == C64::new(0.0, 0.0) {
                continue;
            }
            if let Some(k) = basis.raised(i, j) {
                let n = basis.state(i)[j] as f64;
                t.push((k, i, c * (n + 1.0).sqrt()));
            }
        }
    }
    OperatorMatrix::from_triplets(basis.dim(), basis.dim(), t)
}

/// Returns `(a†(h), a(h), φ(h))` with `φ = (a† + a)/√2`.
pub fn field_ops(basis: &FockBasis, h: &OneBosonVector) -> (OperatorMatrix, OperatorMatrix, OperatorMatrix) {
    let ad = creation(basis, h);
    let a = ad.adjoint();
    let phi = ad.add(&a).scale_real(std::f64::consts::FRAC_1_SQRT_2);
    let phi = phi.verify_hermitian().expect("field operator is Hermitian by construction");
    (ad, a, phi)
}

/// Field operator `φ(h)` only.
pub fn field(basis: &FockBasis, h: &OneBosonVector) -> OperatorMatrix {
    field_ops(basis, h).2
}

/// Second quantization `dΓ(m)` of a diagonal one-boson multiplier.
pub fn dgamma(basis: &FockBasis, multiplier: &[f64]) -> OperatorMatrix {
    assert_eq!(multiplier.len(), basis.mode_count());
    let diag: Vec<f64> = basis
        .states()
        .iter()
        .map(|s| s.iter().zip(multiplier).map(|(&n, &m)| n as f64 * m).sum())
        .collect();
    OperatorMatrix::from_real_diagonal(&diag)
}

pub fn number_operator(basis: &FockBasis) -> OperatorMatrix {
    dgamma(basis, &vec![1.0; basis.mode_count()])
}

/// Maximum dimension accepted by the dense Weyl check.
pub const DENSE_WEYL_LIMIT: usize = 2000;

/// `(Re⟨Ω, e^{iφ(h)} Ω⟩, e^{−‖h‖²/4})`.
pub fn weyl_expectation_check(basis: &FockBasis, h: &OneBosonVector) -> Result<(f64, f64)> {
    if basis.dim() > DENSE_WEYL_LIMIT {
        return Err(Error::Budget {
            what: "dense Weyl exponential".into(),
            dim: basis.dim(),
            limit: DENSE_WEYL_LIMIT,
        });
    }
    let phi = field(basis, h).to_dense();
    let (vals, vecs) = hermitian_eigen(&phi);
    // ⟨Ω, V e^{iD} V† Ω⟩ with Ω the first basis vector
    let mut lhs = C64::new(0.0, 0.0);
    for (k, &ev) in vals.iter().enumerate() {
        lhs += vecs[(0, k)].norm_sqr() * C64::from_polar(1.0, ev);
    }
    Ok((lhs.re, (-h.norm_sqr() / 4.0).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(m: usize, j: usize) -> OneBosonVector {
        let mut c = vec![C64::new(0.0, 0.0); m];
        c[j] = C64::new(1.0, 0.0);
        OneBosonVector { coeffs: c }
    }

    #[test]
    fn dimensions() {
        assert_eq!(enumerate_basis(2, 2).unwrap().dim(), 6);
        assert_eq!(enumerate_basis(7, 0).unwrap().dim(), 1);
        assert_eq!(enumerate_basis(4, 3).unwrap().dim(), 35);
        assert!(matches!(enumerate_basis_with_budget(30, 10, 1000), Err(Error::Budget { .. })));
    }

    #[test]
    fn lexicographic_and_roundtrip() {
        let b = enumerate_basis(3, 3).unwrap();
        assert!(b.states().windows(2).all(|w| w[0] < w[1]));
        for i in 0..b.dim() {
            assert_eq!(b.index_of(b.state(i)), Some(i));
        }
    }

    #[test]
    fn vacuum_and_field_moments() {
        let b = enumerate_basis(2, 3).unwrap();
        let h = OneBosonVector {
            coeffs: vec![C64::new(0.3, 0.4), C64::new(-1.0, 0.2)],
        };
        let (ad, a, phi) = field_ops(&b, &h);
        let mut vac = vec![C64::new(0.0, 0.0); b.dim()];
        vac[0] = C64::new(1.0, 0.0);
        assert!(a.matvec(&vac).iter().all(|z| z.norm() == 0.0));
        let p1 = phi.matvec(&vac);
        let m2: f64 = p1.iter().map(|z| z.norm_sqr()).sum();
        assert!((m2 - h.norm_sqr() / 2.0).abs() < 1e-14);
        assert!(ad.adjoint() == a);
    }

    #[test]
    fn ccr_below_top_sector() {
        let b = enumerate_basis(2, 3).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let (adj, _, _) = field_ops(&b, &e(2, j));
                let (_, ai, _) = field_ops(&b, &e(2, i));
                let comm = ai.matmul(&adj).sub(&adj.matmul(&ai)).to_dense();
                for s in 0..b.dim() {
                    if b.total(s) >= 3 {
                        continue;
                    }
                    for t in 0..b.dim() {
                        let want = if s == t && i == j { 1.0 } else { 0.0 };
                        assert!((comm[(t, s)] - C64::new(want, 0.0)).norm() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn dgamma_values() {
        let b = enumerate_basis(2, 3).unwrap();
        let n = number_operator(&b);
        let k = b.index_of(&[2, 1]).unwrap();
        assert_eq!(n.get(k, k).re, 3.0);
        assert_eq!(dgamma(&b, &[0.7, 1.3]).get(0, 0).re, 0.0);
    }

    #[test]
    fn discretize_constant() {
        let g = BathGrid::uniform(1.0, 20).unwrap();
        let h = discretize(|_| Ok(C64::new(1.0, 0.0)), &g, 4.0 * std::f64::consts::PI).unwrap();
        assert!((h.norm_sqr() - 8.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn weyl_single_mode() {
        let b = enumerate_basis(1, 12).unwrap();
        let h = e(1, 0);
        let (lhs, rhs) = weyl_expectation_check(&b, &h).unwrap();
        assert!((lhs - rhs).abs() < 1e-6, "{lhs} {rhs}");
    }

    #[test]
    fn grid_symmetry() {
        let g = BathGrid::geometric(0.01, 2.0, 12).unwrap();
        let m = g.modes();
        for k in 0..m.len() {
            assert_eq!(m[k], -m[m.len() - 1 - k]);
            assert_eq!(g.weights()[k], g.weights()[m.len() - 1 - k]);
        }
        let tot: f64 = g.weights().iter().sum();
        assert!((tot - 4.0).abs() < 1e-12);
    }
}
