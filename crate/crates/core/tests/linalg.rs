use nqcs_core::benchmark;
use nqcs_core::linalg::*;
use proptest::prelude::*;

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

fn matrix_strategy(max_n: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    (1..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(-scale..scale, n * n).prop_map(move |v| Matrix::from_row_slice(n, n, &v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exponential_semigroup(a in matrix_strategy(6, 2.0), s in 0.0..1.0f64, t in 0.0..1.0f64) {
        let lhs = expm(&a, s + t).unwrap();
        let rhs = expm(&a, s).unwrap() * expm(&a, t).unwrap();
        prop_assert!(rel(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn exponential_inverse(a in matrix_strategy(6, 2.0), t in 0.0..1.0f64) {
        let p = expm(&a, t).unwrap() * expm(&a, -t).unwrap();
        prop_assert!(rel(&p, &Matrix::identity(a.nrows(), a.nrows())) < 1e-12);
    }

    #[test]
    fn integral_satisfies_derivative_identity(a in matrix_strategy(6, 3.0), rho in 0.0..0.5f64) {
        // A ∫₀^ρ e^{As} ds + I = e^{Aρ}, also for singular A
        let phi = expm_integral(&a, rho).unwrap();
        let n = a.nrows();
        let lhs = &a * phi + Matrix::identity(n, n);
        prop_assert!(rel(&lhs, &expm(&a, rho).unwrap()) < 1e-12);
    }

    #[test]
    fn integral_is_additive(a in matrix_strategy(5, 2.0), s in 0.0..0.3f64, t in 0.0..0.3f64) {
        let whole = expm_integral(&a, s + t).unwrap();
        let split = expm_integral(&a, s).unwrap() + expm(&a, s).unwrap() * expm_integral(&a, t).unwrap();
        prop_assert!(rel(&whole, &split) < 1e-12);
    }

    #[test]
    fn joint_evaluation_matches_separate(a in matrix_strategy(6, 2.0), rho in 0.0..1.0f64) {
        let (e, f) = expm_and_integral(&a, rho).unwrap();
        prop_assert!(rel(&e, &expm(&a, rho).unwrap()) < 1e-13);
        prop_assert!(rel(&f, &expm_integral(&a, rho).unwrap()) < 1e-13);
    }

    #[test]
    fn symmetric_eigen_reconstructs(v in prop::collection::vec(-5.0..5.0f64, 16)) {
        let m = Matrix::from_row_slice(4, 4, &v);
        let s = &m + m.transpose();
        let e = symmetric_eigen(&s).unwrap();
        let back = &e.vectors * Matrix::from_diagonal(&e.values) * e.vectors.transpose();
        prop_assert!(rel(&back, &s) < 1e-12);
        prop_assert!(e.values.as_slice().windows(2).all(|w| w[0] <= w[1]));
        prop_assert!((max_eigenvalue(&s) - e.values[3]).abs() < 1e-12 * (1.0 + s.norm()));
    }
}

#[test]
fn integral_of_nilpotent_is_polynomial() {
    let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let f = expm_integral(&a, 0.3).unwrap();
    let want = Matrix::from_row_slice(2, 2, &[0.3, 0.045, 0.0, 0.3]);
    assert!((f - want).amax() < 1e-16);
}

#[test]
fn benchmark_loop_decomposes_into_small_blocks() {
    let s = nqcs_core::model::LoopStructure::new(&benchmark::plant(), &benchmark::controller()).unwrap();
    let d = real_block_decompose(&s.lambda).unwrap();
    assert!(d.block_sizes().iter().all(|&b| b <= 2));
    assert_eq!(d.dim(), 6);
    assert!(rel(&d.reconstruct(), &s.lambda) < 1e-12);
    // the decomposition diagonalizes the flow blockwise
    let h = 0.05;
    let direct = expm(&s.lambda, h).unwrap();
    let blockwise = block_diag(&d.blocks.iter().map(|b| expm(b, h).unwrap()).collect::<Vec<_>>());
    assert!(rel(&(&d.transform * blockwise * &d.transform_inv), &direct) < 1e-11);
}

#[test]
fn spectral_norm_dominates_entries() {
    let a = Matrix::from_row_slice(2, 3, &[3.0, 0.0, 0.0, 0.0, -4.0, 0.0]);
    assert!((norm2(&a) - 4.0).abs() < 1e-14);
    assert_eq!(norm1(&a), 4.0);
}
