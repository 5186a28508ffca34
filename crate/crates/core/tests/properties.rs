use gramstab::feedback::assemble_static;
use gramstab::gramian::{build_gramian, build_pack, lyapunov_oracle, WeightProfile};
use gramstab::linalg::{adjoint, numerical_abscissa, propagate, propagator, spd_factorize};
use gramstab::models::{random_controllable, skew_oscillator_chain};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

fn vector(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0..1.0f64, n).prop_map(DVector::from_vec)
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn group_law((a, v) in (2usize..6).prop_flat_map(|n| (matrix(n), vector(n))), t1 in 0.0..2.0f64, t2 in 0.0..2.0f64) {
        let whole = propagate(&a, t1 + t2, &v).unwrap();
        let split = propagate(&a, t1, &propagate(&a, t2, &v).unwrap()).unwrap();
        prop_assert!(rel(&split, &whole) <= 1e-10);
    }

    #[test]
    fn skew_propagation_is_isometric((m, v) in (2usize..6).prop_flat_map(|n| (matrix(n), vector(n))), t in -5.0..5.0f64) {
        let a = &m - m.transpose();
        let w = propagate(&a, t, &v).unwrap();
        prop_assert!((w.norm() - v.norm()).abs() <= 1e-10 * v.norm().max(1.0));
    }

    #[test]
    fn adjoint_commutes_with_propagation(a in (2usize..6).prop_flat_map(matrix), t in 0.0..2.0f64) {
        let lhs = propagator(&adjoint(&a), t).unwrap();
        let rhs = adjoint(&propagator(&a, t).unwrap());
        prop_assert!((lhs - &rhs).norm() <= 1e-10 * rhs.norm());
    }

    #[test]
    fn spd_round_trip(m in (2usize..6).prop_flat_map(matrix)) {
        let n = m.nrows();
        let spd = &m * m.transpose() + DMatrix::identity(n, n);
        let f = spd_factorize(&spd, 1e-12).unwrap();
        prop_assert!((f.reconstruct() - &spd).norm() <= 1e-10 * spd.norm());
    }

    #[test]
    fn urquiza_gramian_matches_lyapunov_solution(n in 2usize..6, m in 1usize..3, seed in 0u64..1000) {
        let sys = random_controllable(n, m, seed).unwrap();
        let lambda = numerical_abscissa(&(-sys.a.transpose())) + 0.5;
        let w = DMatrix::identity(m, m);
        let q = build_gramian(&sys, &w, &WeightProfile::urquiza(lambda).unwrap(), 16).unwrap();
        let oracle = lyapunov_oracle(&sys, &w, lambda).unwrap();
        prop_assert!((&q - &oracle).norm() <= 1e-8 * oracle.norm());
    }

    #[test]
    fn static_block_leaves_the_graph_invariant(k in 1usize..4, lambda in 0.25..2.0f64, z in vector(8)) {
        let sys = skew_oscillator_chain(k, 0.5, &[1]).unwrap();
        let n = sys.state_dim();
        let pack = build_pack(&sys, &DMatrix::identity(1, 1), &WeightProfile::urquiza(lambda).unwrap(), 16).unwrap();
        let cl = assemble_static(&pack, &sys).unwrap();
        let z = z.rows(0, n).into_owned();
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&(pack.q() * &z));
        x.rows_mut(n, n).copy_from(&z);
        let image = cl.block() * x;
        let gap = image.rows(0, n) - pack.q() * image.rows(n, n);
        prop_assert!(gap.norm() / z.norm().max(1e-12) <= 10.0 * pack.identity_residual().max(1e-15));
    }
}
