//! Chebyshev interpolation of scalar functions on an interval, with the
//! Bernstein-ellipse remainder bound `4 c_m ρ^{-k} / (ρ - 1)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::Polynomial;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApproxError {
    #[error("function is not finite at interpolation node x = {x}")]
    NonFinite { x: f64 },
    #[error("invalid interval [{a}, {b}]: need a < b")]
    BadInterval { a: f64, b: f64 },
    #[error("Bernstein ellipse parameter rho = {0} must exceed 1")]
    BadRho(f64),
    #[error("sup-norm bound c_m = {0} must be non-negative")]
    BadBound(f64),
}

/// The `k + 1` Chebyshev points `cos(iπ/k)`, from `1` down to `-1`.
/// `k = 0` gives the single node `1`.
pub fn chebyshev_nodes(k: usize) -> Vec<f64> {
    if k == 0 {
        return vec![1.0];
    }
    (0..=k)
        .map(|i| {
            // exact zeros and symmetry instead of cos round-off
            if 2 * i == k {
                0.0
            } else if 2 * i < k {
                (i as f64 * PI / k as f64).cos()
            } else {
                -((k - i) as f64 * PI / k as f64).cos()
            }
        })
        .collect()
}

/// `Σ c_i T_i(x̂)` on `[a, b]`, where `x̂` maps `[a, b]` onto `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevInterpolant {
    pub a: f64,
    pub b: f64,
    pub coeffs: Vec<f64>,
}

impl ChebyshevInterpolant {
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    fn to_unit(&self, x: f64) -> f64 {
        (x - 0.5 * (self.b + self.a)) / (0.5 * (self.b - self.a))
    }

    fn from_unit(&self, t: f64) -> f64 {
        0.5 * (self.b + self.a) + 0.5 * (self.b - self.a) * t
    }

    /// Clenshaw evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        let t = self.to_unit(x);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * t * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        self.coeffs.first().copied().unwrap_or(0.0) + t * b1 - b2
    }

    /// Interpolation nodes mapped into `[a, b]`.
    pub fn nodes(&self) -> Vec<f64> {
        chebyshev_nodes(self.degree()).into_iter().map(|t| self.from_unit(t)).collect()
    }

    /// Expanded monomial form in the original variable.
    pub fn to_polynomial(&self) -> Polynomial {
        self.to_polynomial_in(1, 0)
    }

    /// Expanded monomial form as a polynomial in variable `var` of an
    /// `nvars`-dimensional space.
    pub fn to_polynomial_in(&self, nvars: usize, var: usize) -> Polynomial {
        let half = 0.5 * (self.b - self.a);
        let mid = 0.5 * (self.b + self.a);
        let t = &Polynomial::var(nvars, var).scale(1.0 / half)
            - &Polynomial::constant(nvars, mid / half);
        let mut out = Polynomial::zero(nvars);
        let mut prev = Polynomial::constant(nvars, 1.0);
        let mut cur = t.clone();
        for (i, &c) in self.coeffs.iter().enumerate() {
            let ti = match i {
                0 => prev.clone(),
                1 => cur.clone(),
                _ => {
                    let next = &(&t * &cur).scale(2.0) - &prev;
                    prev = std::mem::replace(&mut cur, next);
                    cur.clone()
                }
            };
            out = &out + &ti.scale(c);
        }
        out
    }
}

/// Interpolates `f` at the `k + 1` Chebyshev points of `[a, b]`; coefficients
/// come from the discrete cosine relation on the node values.
pub fn fit_interpolant<F>(f: F, k: usize, a: f64, b: f64) -> Result<ChebyshevInterpolant, ApproxError>
where
    F: Fn(f64) -> f64,
{
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(ApproxError::BadInterval { a, b });
    }
    let proto = ChebyshevInterpolant { a, b, coeffs: vec![0.0; k + 1] };
    let nodes = chebyshev_nodes(k);
    let mut values = Vec::with_capacity(k + 1);
    for &t in &nodes {
        let x = proto.from_unit(t);
        let v = f(x);
        if !v.is_finite() {
            return Err(ApproxError::NonFinite { x });
        }
        values.push(v);
    }
    if k == 0 {
        return Ok(ChebyshevInterpolant { a, b, coeffs: values });
    }
    let kf = k as f64;
    let mut coeffs = Vec::with_capacity(k + 1);
    for i in 0..=k {
        let mut s = 0.0;
        for (j, &v) in values.iter().enumerate() {
            let w = if j == 0 || j == k { 0.5 } else { 1.0 };
            s += w * v * ((i * j) as f64 * PI / kf).cos();
        }
        let mut c = 2.0 * s / kf;
        if i == 0 || i == k {
            c *= 0.5;
        }
        coeffs.push(c);
    }
    Ok(ChebyshevInterpolant { a, b, coeffs })
}

/// Bound `4 c_m ρ^{-k} / (ρ - 1)` on the interpolation remainder of a function
/// analytic inside the Bernstein ellipse `E_ρ` with `|f| ≤ c_m` there.
pub fn remainder_bound(c_m: f64, rho: f64, k: usize) -> Result<f64, ApproxError> {
    if !(rho > 1.0) {
        return Err(ApproxError::BadRho(rho));
    }
    if !(c_m >= 0.0) {
        return Err(ApproxError::BadBound(c_m));
    }
    Ok(4.0 * c_m * rho.powi(-(k as i32)) / (rho - 1.0))
}

/// `max |f(x) - P(x)|` over `n_samples` evenly spaced points of `[a, b]`
/// (endpoints included).
pub fn sup_error<F>(f: F, interp: &ChebyshevInterpolant, n_samples: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    let n = n_samples.max(2);
    (0..n)
        .map(|i| {
            let x = interp.a + (interp.b - interp.a) * i as f64 / (n - 1) as f64;
            (f(x) - interp.eval(x)).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes() {
        assert_eq!(chebyshev_nodes(2), vec![1.0, 0.0, -1.0]);
        assert_eq!(chebyshev_nodes(1), vec![1.0, -1.0]);
        assert_eq!(chebyshev_nodes(0), vec![1.0]);
        let h = 2f64.sqrt() / 2.0;
        let n4 = chebyshev_nodes(4);
        for (a, b) in n4.iter().zip([1.0, h, 0.0, -h, -1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        for k in 1..12 {
            let n = chebyshev_nodes(k);
            for i in 0..=k {
                assert_eq!(n[i], -n[k - i]);
            }
        }
    }

    #[test]
    fn reproduces_cubic_and_constant() {
        let c = fit_interpolant(|x| x * x * x, 3, -1.0, 1.0).unwrap();
        let expected = Polynomial::var(1, 0).pow(3);
        assert!(c.to_polynomial().approx_eq(&expected, 1e-10));
        assert!((c.coeffs[3] - 0.25).abs() < 1e-14);
        let c = fit_interpolant(|_| 1.0, 6, -3.0, 5.0).unwrap();
        assert!((c.coeffs[0] - 1.0).abs() < 1e-14);
        assert!(c.coeffs[1..].iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn exact_at_nodes_and_clenshaw_matches_expansion() {
        let f = |x: f64| (x * 0.7).sin() + x.exp() / 3.0;
        let c = fit_interpolant(f, 9, -2.0, 1.5).unwrap();
        for x in c.nodes() {
            assert!((c.eval(x) - f(x)).abs() < 1e-10);
        }
        let p = c.to_polynomial();
        for i in 0..=50 {
            let x = -2.0 + 3.5 * i as f64 / 50.0;
            assert!((p.eval(&[x]) - c.eval(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn polynomial_forms() {
        let t2 = ChebyshevInterpolant { a: -1.0, b: 1.0, coeffs: vec![0.0, 0.0, 1.0] };
        let expected = &Polynomial::var(1, 0).pow(2).scale(2.0) - &Polynomial::constant(1, 1.0);
        assert!(t2.to_polynomial().approx_eq(&expected, 1e-14));
        let t1 = ChebyshevInterpolant { a: 0.0, b: 2.0, coeffs: vec![0.0, 1.0] };
        let expected = &Polynomial::var(1, 0) - &Polynomial::constant(1, 1.0);
        assert!(t1.to_polynomial().approx_eq(&expected, 1e-14));
        let t0 = ChebyshevInterpolant { a: -1.0, b: 1.0, coeffs: vec![1.0] };
        assert_eq!(t0.to_polynomial(), Polynomial::constant(1, 1.0));
    }

    #[test]
    fn remainder_bound_values() {
        assert_eq!(remainder_bound(1.0, 2.0, 4).unwrap(), 0.25);
        assert_eq!(remainder_bound(0.0, 3.0, 7).unwrap(), 0.0);
        assert_eq!(remainder_bound(1.0, 2.0, 5).unwrap(), 0.125);
        assert!(matches!(remainder_bound(1.0, 1.0, 3), Err(ApproxError::BadRho(_))));
        assert!(remainder_bound(1.0, 0.5, 3).is_err());
    }

    #[test]
    fn sup_error_examples() {
        let c = fit_interpolant(|x| x * x, 1, -1.0, 1.0).unwrap();
        // the degree-1 interpolant through the nodes ±1 is the constant 1
        assert!((c.eval(0.0) - 1.0).abs() < 1e-14);
        assert!((sup_error(|x| x * x, &c, 101) - 1.0).abs() < 1e-14);

        let c = fit_interpolant(f64::exp, 10, -1.0, 1.0).unwrap();
        let e = sup_error(f64::exp, &c, 10_000);
        assert!(e <= remainder_bound(std::f64::consts::E, 2.0, 10).unwrap());
        let p = c.to_polynomial();
        assert!(sup_error(|x| p.eval(&[x]), &c, 1000) <= 1e-9);
    }

    #[test]
    fn non_finite_node_is_reported() {
        let err = fit_interpolant(|x| 1.0 / x, 2, -1.0, 1.0).unwrap_err();
        assert_eq!(err, ApproxError::NonFinite { x: 0.0 });
        assert!(fit_interpolant(|x| x, 2, 1.0, 1.0).is_err());
    }
}
