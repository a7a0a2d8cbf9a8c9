use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roa_core::poly::{monomial_basis, monomial_range, GramRepresentation, Polynomial};
use roa_core::sosprog::{AffinePoly, LinearForm, ScalarKind, Sense, SolveStatus, SolverSettings, SosProgram};

fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &r * r.transpose() + DMatrix::identity(n, n) * 1e-3
}

fn motzkin() -> Polynomial {
    let x = Polynomial::var(2, 0);
    let y = Polynomial::var(2, 1);
    let x2 = x.pow(2);
    let y2 = y.pow(2);
    &(&(&(&x2.pow(2) * &y2) + &(&x2 * &y2.pow(2))) - &(&x2 * &y2).scale(3.0)) + &Polynomial::constant(2, 1.0)
}

fn feasibility(p: Polynomial) -> SolveStatus {
    let mut prog = SosProgram::new(p.nvars());
    prog.add_sos_constraint("p", AffinePoly::from_poly(p)).unwrap();
    prog.solve(&SolverSettings::default()).unwrap().status
}

#[test]
fn motzkin_is_nonnegative_but_not_sos() {
    let m = motzkin();
    // AM-GM: x⁴y² + x²y⁴ + 1 ≥ 3x²y², so sampled values stay ≥ 0
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..2000 {
        let p = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        assert!(m.eval(&p) >= -1e-12);
    }
    assert_eq!(m.eval(&[1.0, 1.0]), 0.0);
    assert_eq!(feasibility(m), SolveStatus::Infeasible);
}

#[test]
fn random_gram_polynomials_are_accepted() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..10 {
        let nvars = 1 + trial % 3;
        let basis = monomial_basis(nvars, 2);
        let q = random_psd(&mut rng, basis.len());
        let p = GramRepresentation::new(basis, q).unwrap().expand();
        let mut prog = SosProgram::new(nvars);
        prog.add_sos_constraint("p", AffinePoly::from_poly(p)).unwrap();
        let r = prog.solve(&SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal, "trial {trial}");
        assert!(r.verification.unwrap().passed);
    }
}

#[test]
fn odd_degree_is_never_sos() {
    let x = Polynomial::var(1, 0);
    for p in [x.clone(), &x.pow(3) + &Polynomial::constant(1, 5.0), &x.pow(5) + &x.pow(4).scale(10.0)] {
        assert_eq!(feasibility(p), SolveStatus::Infeasible);
    }
    let xy = &Polynomial::var(2, 0).pow(3) + &Polynomial::sum_of_squares_of_vars(2, 1.0);
    assert_eq!(feasibility(xy), SolveStatus::Infeasible);
}

fn lower_bound_program(duplicates: usize) -> f64 {
    // max γ s.t. x⁴ - 3x² + 1 - γ ∈ Σ; the global minimum is 1 - 9/4
    let x = Polynomial::var(1, 0);
    let p = &(&x.pow(4) - &x.pow(2).scale(3.0)) + &Polynomial::constant(1, 1.0);
    let mut prog = SosProgram::new(1);
    let g = prog.scalar("gamma", ScalarKind::Free);
    let expr = AffinePoly::from_poly(p).sub(&g.times(&Polynomial::constant(1, 1.0)));
    for i in 0..=duplicates {
        prog.add_sos_constraint(&format!("c{i}"), expr.clone()).unwrap();
    }
    prog.set_objective(Sense::Maximize, g.form());
    let r = prog.solve(&SolverSettings::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    r.objective
}

#[test]
fn duplicate_constraints_leave_optimum_unchanged() {
    let once = lower_bound_program(0);
    assert!((once - (1.0 - 2.25)).abs() < 1e-6);
    let thrice = lower_bound_program(2);
    assert!((once - thrice).abs() <= 1e-6);
}

#[test]
fn equality_rows_match_monomial_count() {
    let mut prog = SosProgram::new(2);
    let v = prog.free_poly("v", monomial_range(2, 2, 2));
    let field = vec![
        &Polynomial::var(2, 0).scale(-1.0) + &Polynomial::var(2, 1),
        Polynomial::var(2, 1).scale(-1.0),
    ];
    let vdot = v.expr().lie_derivative(&field).scale(-1.0);
    prog.add_sos_constraint_with_min_degree("vdot", vdot, 1).unwrap();
    prog.add_sos_constraint_with_min_degree("v", v.expr().clone(), 1).unwrap();
    let inst = prog.compile().unwrap();
    assert_eq!(inst.num_equalities(), 6);
    assert_eq!(inst.psd_block_sizes(), vec![2, 2]);
    let mut lin = LinearForm::default();
    for m in monomial_range(2, 2, 2) {
        lin = lin.add(&v.expr().coefficient(&m));
    }
    prog.add_linear_equality(lin, 1.0);
    let r = prog.solve(&SolverSettings::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn prop_gram_round_trip_feasible(seed in any::<u64>(), nvars in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = monomial_basis(nvars, 2);
        let q = random_psd(&mut rng, basis.len());
        let p = GramRepresentation::new(basis, q).unwrap().expand();
        let mut prog = SosProgram::new(nvars);
        prog.add_sos_constraint("p", AffinePoly::from_poly(p)).unwrap();
        let r = prog.solve(&SolverSettings::default()).unwrap();
        prop_assert_eq!(r.status, SolveStatus::Optimal);
        prop_assert!(r.verification.unwrap().passed);
    }
}
