use proptest::prelude::*;
use roa_core::learn::{fit_polynomial_mean, gp_fit, least_squares_poly, KernelConfig, Region};
use roa_core::poly::{monomial_basis, Polynomial};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kernel_matrices_are_symmetric_psd(
        pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..=20),
        sf in 0.1f64..3.0,
        l in 0.1f64..3.0,
    ) {
        let k = KernelConfig::isotropic(sf, l, 0.0, 2);
        let m = k.matrix(&pts);
        prop_assert!((&m - m.transpose()).amax() == 0.0);
        for i in 0..pts.len() {
            prop_assert!((m[(i, i)] - sf * sf).abs() < 1e-12);
        }
        let min_eig = m.symmetric_eigen().eigenvalues.min();
        prop_assert!(min_eig >= -1e-10, "{}", min_eig);
    }

    #[test]
    fn least_squares_recovers_polynomials(coeffs in prop::collection::vec(-2.0f64..2.0, 6)) {
        let basis = monomial_basis(2, 2);
        let mut p = Polynomial::zero(2);
        for (m, c) in basis.iter().zip(&coeffs) {
            p.add_term(m.clone(), *c);
        }
        let region = Region::cube(2, 1.5);
        let pts = region.grid(15).unwrap();
        let vals: Vec<f64> = pts.iter().map(|x| p.eval(x)).collect();
        let fit = least_squares_poly(&pts, &vals, 2).unwrap();
        prop_assert!(fit.rmse <= 1e-3);
        prop_assert!(fit.poly.approx_eq(&p, 1e-8));
    }
}

#[test]
fn dense_noise_free_polynomial_data_is_recovered_through_the_gp() {
    let truth = |x: &[f64]| 0.3 * x[0] * x[0] - 0.2 * x[0] * x[1] + 0.1 * x[1];
    let region = Region::cube(2, 1.0);
    let xs = region.grid(13).unwrap();
    let ys: Vec<f64> = xs.iter().map(|x| truth(x)).collect();
    let model = gp_fit(&xs, &ys, &KernelConfig::isotropic(1.0, 0.8, 1e-4, 2)).unwrap();
    let fit = fit_polynomial_mean(&model, 2, &region, 21).unwrap();
    let check = region.grid(17).unwrap();
    let err = (check.iter().map(|x| (fit.poly.eval(x) - truth(x)).powi(2)).sum::<f64>() / check.len() as f64).sqrt();
    assert!(err <= 1e-3, "{err}");
}
