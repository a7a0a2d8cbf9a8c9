use std::f64::consts::PI;

use proptest::prelude::*;
use roa_core::approx::{fit_interpolant, remainder_bound, sup_error};

/// max |f| on the Bernstein ellipse E_ρ, sampled densely on its boundary
fn ellipse_max<F: Fn(f64, f64) -> f64>(abs_f: F, rho: f64) -> f64 {
    (0..4000)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / 4000.0;
            let re = 0.5 * (rho + 1.0 / rho) * t.cos();
            let im = 0.5 * (rho - 1.0 / rho) * t.sin();
            abs_f(re, im)
        })
        .fold(0.0, f64::max)
}

#[test]
fn exp_converges_monotonically() {
    let mut prev = f64::INFINITY;
    for k in 2..=16 {
        let c = fit_interpolant(f64::exp, k, -1.0, 1.0).unwrap();
        let e = sup_error(f64::exp, &c, 4001);
        assert!(e <= prev + 1e-14, "k = {k}: {e} > {prev}");
        prev = e;
    }
}

#[test]
fn bound_holds_for_analytic_targets() {
    let rho = 2.0;
    // |exp(a+ib)| = e^a, |sin(a+ib)|² = sin²a + sinh²b
    let exp_cm = ellipse_max(|a, _| a.exp(), rho);
    let sin_cm = ellipse_max(|a, b| (a.sin().powi(2) + b.sinh().powi(2)).sqrt(), rho);
    // poles of 1/(1+(z/3)²) at ±3i lie outside E_2 (semi-minor axis 0.75)
    let rat_cm = ellipse_max(
        |a, b| {
            let (re, im) = (1.0 + (a * a - b * b) / 9.0, 2.0 * a * b / 9.0);
            1.0 / (re * re + im * im).sqrt()
        },
        rho,
    );
    let targets: [(&dyn Fn(f64) -> f64, f64); 3] = [
        (&f64::exp, exp_cm),
        (&f64::sin, sin_cm),
        (&|x: f64| 1.0 / (1.0 + (x / 3.0).powi(2)), rat_cm),
    ];
    for (f, cm) in targets {
        for k in 1..=14 {
            let c = fit_interpolant(f, k, -1.0, 1.0).unwrap();
            let e = sup_error(f, &c, 5001);
            assert!(e <= remainder_bound(cm, rho, k).unwrap(), "k = {k}");
        }
    }
}

proptest! {
    #[test]
    fn polynomials_of_degree_at_most_k_are_reproduced(
        coeffs in prop::collection::vec(-3.0f64..3.0, 1..7),
        extra in 0usize..4,
    ) {
        let f = |x: f64| coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c);
        let k = coeffs.len() - 1 + extra;
        let c = fit_interpolant(f, k, -1.5, 2.0).unwrap();
        prop_assert!(sup_error(f, &c, 2001) <= 1e-9);
    }

    #[test]
    fn domain_map_is_consistent(a in -5.0f64..0.0, w in 0.5f64..6.0, k in 1usize..12) {
        let b = a + w;
        let f = |x: f64| (0.3 * x).sin() + 0.1 * x * x;
        let direct = fit_interpolant(f, k, a, b).unwrap();
        let mapped = fit_interpolant(|t| f(0.5 * (a + b) + 0.5 * (b - a) * t), k, -1.0, 1.0).unwrap();
        for (p, q) in direct.coeffs.iter().zip(&mapped.coeffs) {
            prop_assert!((p - q).abs() <= 1e-9);
        }
    }

    #[test]
    fn bound_strictly_decreases_in_k(cm in 0.01f64..100.0, rho in 1.01f64..5.0, k in 0usize..40) {
        prop_assert!(remainder_bound(cm, rho, k + 1).unwrap() < remainder_bound(cm, rho, k).unwrap());
    }
}
