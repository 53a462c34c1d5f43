use nqcs_core::linalg::{max_eigenvalue, Matrix};
use nqcs_core::sdp::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `AᵀP + PA ⪯ 0`, `P ⪰ I`.
fn lyapunov_system(a: &Matrix) -> AffineConstraintSystem {
    let n = a.nrows();
    let mut s = AffineConstraintSystem::new(0, vec![n]);
    s.push(AffineConstraint::new("lyap", Sense::NegSemidef, Matrix::zeros(n, n)).matrix(0, Matrix::identity(n, n), a.clone()));
    s.push(
        AffineConstraint::new("pos", Sense::PosSemidef, -Matrix::identity(n, n))
            .matrix(0, Matrix::identity(n, n) * 0.5, Matrix::identity(n, n)),
    );
    s
}

fn random_stable(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let m = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let shift = m.norm() + 0.1;
    m - Matrix::identity(n, n) * shift
}

#[test]
fn certificates_pass_independent_verification() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for n in 1..=5 {
        let a = random_stable(n, &mut rng);
        let sys = lyapunov_system(&a);
        let out = solve_feasibility(&sys, &SolveOptions::default()).unwrap();
        assert_eq!(out.status, SolveStatus::FeasibleWithMargin);
        let v = verify(&sys, &out.x, 0.0, SolveOptions::default().relative_margin);
        assert!(v.all_satisfied);
        assert_eq!(v.worst_margin, out.worst_margin);
        let p = sys.unpack_matrix(&out.x, 0);
        assert!(max_eigenvalue(&(a.transpose() * &p + &p * &a)) < 0.0);
    }
}

#[test]
fn requested_margin_is_honoured_or_refused() {
    let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
    let sys = lyapunov_system(&a);
    let opts = SolveOptions { requested_margin: 0.1, ..Default::default() };
    let out = solve_feasibility(&sys, &opts).unwrap();
    assert_eq!(out.status, SolveStatus::FeasibleWithMargin);
    assert!(out.worst_margin <= -0.1);

    // x ≤ 1 and x ≥ 1 leave no room for any margin
    let mut tight = AffineConstraintSystem::new(1, vec![]);
    tight.push(AffineConstraint::new("le", Sense::NegSemidef, Matrix::from_element(1, 1, -1.0)).scalar(0, Matrix::from_element(1, 1, 1.0)));
    tight.push(AffineConstraint::new("ge", Sense::PosSemidef, Matrix::from_element(1, 1, -1.0)).scalar(0, Matrix::from_element(1, 1, 1.0)));
    let out = solve_feasibility(&tight, &SolveOptions { requested_margin: 1e-3, ..Default::default() }).unwrap();
    assert_ne!(out.status, SolveStatus::FeasibleWithMargin);
}

#[test]
fn verification_rejects_a_perturbed_point() {
    let a = Matrix::from_row_slice(2, 2, &[-1.0, 3.0, 0.0, -1.0]);
    let sys = lyapunov_system(&a);
    let out = solve_feasibility(&sys, &SolveOptions::default()).unwrap();
    let mut x = out.x.clone();
    // P = 0 violates P ⪰ I
    x.iter_mut().for_each(|v| *v = 0.0);
    let v = verify(&sys, &x, 0.0, 0.0);
    assert!(!v.all_satisfied);
    assert!(v.worst_margin >= 1.0 - 1e-12);
}

#[test]
fn unstable_system_has_no_certificate() {
    let a = Matrix::from_row_slice(3, 3, &[0.2, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -3.0]);
    let out = solve_feasibility(&lyapunov_system(&a), &SolveOptions::default()).unwrap();
    assert_eq!(out.status, SolveStatus::NotFoundWithinBudget);
    assert!(out.worst_margin > 0.0);
}

#[test]
fn minimization_brackets_the_optimum() {
    // minimize γ with [[−γ, 1], [1, −1]] ⪯ 0, i.e. γ ≥ 1
    let mut s = AffineConstraintSystem::new(1, vec![]);
    s.push(
        AffineConstraint::new("schur", Sense::NegSemidef, Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, -1.0]))
            .scalar(0, Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0])),
    );
    let out = minimize_scalar_objective(&s, 0, 0.0, 100.0, 1e-3, 80, &SolveOptions::default()).unwrap();
    let g = out.objective.unwrap();
    assert!((1.0..1.01).contains(&g), "{g}");
    assert_eq!(out.status, SolveStatus::FeasibleWithMargin);
}

#[test]
fn malformed_systems_are_rejected() {
    let mut s = AffineConstraintSystem::new(1, vec![]);
    s.push(AffineConstraint::new("c", Sense::NegSemidef, Matrix::identity(2, 2)).scalar(0, Matrix::identity(3, 3)));
    assert!(s.validate().is_err());
    assert!(solve_feasibility(&s, &SolveOptions::default()).is_err());
}
