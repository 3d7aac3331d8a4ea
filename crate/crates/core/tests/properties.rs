use proptest::prelude::*;

use thermofield_core::cli::cache::{decode, encode};
use thermofield_core::dynamics::cesaro_average;
use thermofield_core::dyson::{
    brute_force_correlation, enumerate_pairings, graph_check, omega_q_exact, pair_bound, propagator, segment_distance,
    series_bound, wick_expectation, Bath, FiniteVolumeModel, SegmentPartition,
};
use thermofield_core::fock::{enumerate_basis, BathGrid};
use thermofield_core::linalg::hermitian_eigen;
use thermofield_core::liouvillian::assemble;
use thermofield_core::model::{pauli, spin_boson, FormFactor};
use thermofield_core::spectral::regularized_lso;

fn double_factorial(k: usize) -> usize {
    (1..=k).rev().step_by(2).product()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn small_lattice(beta: f64, lambda: f64) -> FiniteVolumeModel {
    let spec = spin_boson(1.0, pauli::x(), FormFactor::gaussian(0.5, 1.0, 2.0), beta, lambda).unwrap();
    FiniteVolumeModel::lattice(spec.atom.clone(), &spec.couplings, 2.0 * std::f64::consts::PI, 1, beta, lambda).unwrap()
}

#[test]
fn pairing_counts() {
    for n in 1..=5 {
        assert_eq!(enumerate_pairings(2 * n).unwrap().len(), double_factorial(2 * n - 1));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn series_bound_monotone_and_convex(x in 0.0f64..3.0, h in 0.01f64..0.5) {
        let a = series_bound(x).unwrap();
        let b = series_bound(x + h).unwrap();
        let c = series_bound(x + 2.0 * h).unwrap();
        prop_assert!(a < b);
        prop_assert!(b - a <= c - b + 1e-9 * c);
    }

    #[test]
    fn wick_matches_brute_force(beta in 1.0f64..3.0, raw in prop::collection::vec(0.0f64..1.0, 4)) {
        let fv = FiniteVolumeModel::single_mode(1.0, 1.0, beta);
        let ts = sorted(raw.iter().map(|r| r * beta).collect());
        let w = wick_expectation(&fv, &[0; 4], &ts).unwrap();
        let bf = brute_force_correlation(&fv, &[0; 4], &ts, 40).unwrap();
        prop_assert!((w - bf).abs() <= 1e-7 * bf.abs());
    }

    #[test]
    fn cesaro_of_constant(c in -5.0f64..5.0, steps in prop::collection::vec(0.01f64..1.0, 1..20)) {
        let mut times = vec![0.0];
        for s in &steps {
            times.push(times.last().unwrap() + s);
        }
        for v in cesaro_average(&times, &vec![c; times.len()]) {
            prop_assert!((v - c).abs() <= 1e-12 * c.abs().max(1.0));
        }
    }

    #[test]
    fn segment_distance_symmetric(half in 1usize..6, beta in 1.0f64..20.0, l in 1usize..12, r in 1usize..12) {
        let two_m = 2 * half;
        let part = SegmentPartition::new(two_m, beta).unwrap();
        let (l, r) = ((l - 1) % two_m + 1, (r - 1) % two_m + 1);
        let a = segment_distance(&part, l, r).unwrap();
        let b = segment_distance(&part, r, l).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a.2 >= -1e-12 && a.2 <= beta / 2.0 + 1e-12);
    }

    #[test]
    fn pair_bound_dominates_propagator(beta in 1.0f64..4.0, half in 1usize..4, raw in prop::collection::vec(0.0f64..1.0, 2)) {
        let fv = small_lattice(beta, 0.1);
        let part = SegmentPartition::new(2 * half, beta).unwrap();
        let ts = sorted(raw.iter().map(|r| r * beta).collect());
        let p = propagator(&fv, 0, 0, ts[0], ts[1]).unwrap();
        let c = pair_bound(&fv, &part, part.segment_of(ts[0]), part.segment_of(ts[1]), Bath::Lattice).unwrap();
        prop_assert!(p.abs() <= c * (1.0 + 1e-12));
    }

    #[test]
    fn graph_sum_dominates_exact(beta in 1.0f64..3.0, raw in prop::collection::vec(0.0f64..1.0, 4)) {
        let fv = small_lattice(beta, 0.1);
        let part = SegmentPartition::new(4, beta).unwrap();
        let ts = sorted(raw.iter().map(|r| r * beta).collect());
        let g = graph_check(&fv, &part, &[0; 4], &ts, Bath::Lattice).unwrap();
        prop_assert!(g.exact.abs() <= g.graph_sum * (1.0 + 1e-12));
        prop_assert!(g.graph_sum <= g.graph_bound * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cache_roundtrip(p in prop_oneof![Just(-0.5), Just(0.5), Just(1.0)], beta in 0.5f64..5.0, lambda in -0.3f64..0.3, m in 2usize..6, n in 1usize..3) {
        let spec = spin_boson(1.0, pauli::x(), FormFactor::gaussian(p, 1.0, 2.0), beta, lambda).unwrap();
        let grid = BathGrid::uniform(3.0, 2 * m).unwrap();
        let b = assemble(&spec, &enumerate_basis(grid.len(), n).unwrap(), &grid).unwrap();
        let (_, ops) = decode(&encode(&b)).unwrap();
        prop_assert_eq!(ops.len(), 5);
        for (a, o) in ops.iter().zip([&b.l0, &b.i, &b.i_ell, &b.i1, &b.n]) {
            prop_assert_eq!(a, o);
        }
    }

    #[test]
    fn level_shift_is_psd(beta in 0.5f64..5.0, eps in 0.05f64..1.0, p in prop_oneof![Just(-0.5), Just(0.5)]) {
        let spec = spin_boson(1.0, pauli::x(), FormFactor::gaussian(p, 1.0, 2.0), beta, 0.1).unwrap();
        let grid = BathGrid::uniform(3.0, 16).unwrap();
        let b = assemble(&spec, &enumerate_basis(grid.len(), 1).unwrap(), &grid).unwrap();
        let (vals, _) = hermitian_eigen(&regularized_lso(&b, eps).unwrap());
        prop_assert!(vals[0] >= -1e-10 * vals.last().unwrap().abs().max(1.0));
    }

    #[test]
    fn exact_trace_even_in_coupling(beta in 1.0f64..4.0, lambda in 0.01f64..0.3) {
        let a = omega_q_exact(&small_lattice(beta, lambda), 3).unwrap();
        let b = omega_q_exact(&small_lattice(beta, -lambda), 3).unwrap();
        prop_assert!((a - b).abs() <= 1e-10);
    }
}
