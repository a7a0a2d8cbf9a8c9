//! Sparse multivariate polynomials over `f64` in graded lexicographic order,
//! plus the square-matrix (Gram) representation `z(x)ᵀ Q z(x)`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected} variables, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("variable index {index} out of range for {nvars} variables")]
    VariableOutOfRange { index: usize, nvars: usize },
    #[error("Gram matrix is {rows}x{cols} but the basis has {basis} monomials")]
    GramShape { rows: usize, cols: usize, basis: usize },
    #[error("monomial {0} cannot be written as a product of two basis monomials")]
    NotRepresentable(String),
}

/// Exponent vector of a monomial, one entry per ambient variable.
///
/// Ordered by total degree first, then lexicographically with larger leading
/// exponents first, so `1 < x1 < x2 < x1² < x1x2 < x2²`.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    pub fn var(nvars: usize, index: usize) -> Self {
        let mut e = vec![0; nvars];
        e[index] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    /// True when every exponent is even, i.e. the monomial is a square.
    pub fn is_square(&self) -> bool {
        self.0.iter().all(|&e| e % 2 == 0)
    }

    /// Square root of a square monomial.
    pub fn sqrt(&self) -> Option<Monomial> {
        self.is_square()
            .then(|| Monomial(self.0.iter().map(|e| e / 2).collect()))
    }

    pub fn product(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .filter(|(e, _)| **e > 0)
            .map(|(&e, &xi)| xi.powi(e as i32))
            .product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_constant() {
            return write!(f, "1");
        }
        let mut first = true;
        for (i, &e) in self.0.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            if e == 1 {
                write!(f, "x{}", i + 1)?;
            } else {
                write!(f, "x{}^{}", i + 1, e)?;
            }
        }
        Ok(())
    }
}

/// All monomials in `nvars` variables with `min_degree ≤ degree ≤ max_degree`,
/// in graded lexicographic order.
pub fn monomial_range(nvars: usize, min_degree: u32, max_degree: u32) -> Vec<Monomial> {
    fn fill(out: &mut Vec<Monomial>, cur: &mut Vec<u32>, pos: usize, remaining: u32) {
        if pos + 1 == cur.len() {
            cur[pos] = remaining;
            out.push(Monomial(cur.clone()));
            return;
        }
        for e in (0..=remaining).rev() {
            cur[pos] = e;
            fill(out, cur, pos + 1, remaining - e);
        }
        cur[pos] = 0;
    }
    let mut out = Vec::new();
    if nvars == 0 {
        if min_degree == 0 {
            out.push(Monomial(Vec::new()));
        }
        return out;
    }
    let mut cur = vec![0; nvars];
    for d in min_degree..=max_degree {
        fill(&mut out, &mut cur, 0, d);
    }
    out
}

/// All monomials of degree ≤ `max_degree`; there are `C(nvars + max_degree, max_degree)`.
pub fn monomial_basis(nvars: usize, max_degree: u32) -> Vec<Monomial> {
    monomial_range(nvars, 0, max_degree)
}

/// Sparse polynomial; never stores zero coefficients.
#[derive(Clone, PartialEq, Debug)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::monomial(Monomial::one(nvars), c)
    }

    pub fn var(nvars: usize, index: usize) -> Self {
        Self::monomial(Monomial::var(nvars, index), 1.0)
    }

    pub fn monomial(m: Monomial, coeff: f64) -> Self {
        let mut p = Polynomial::zero(m.nvars());
        p.add_term(m, coeff);
        p
    }

    /// Builds a polynomial from (monomial, coefficient) pairs, summing duplicates.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (Monomial, f64)>,
    {
        let mut p = Polynomial::zero(nvars);
        for (m, c) in terms {
            if m.nvars() != nvars {
                return Err(PolyError::DimensionMismatch { expected: nvars, got: m.nvars() });
            }
            p.add_term(m, c);
        }
        Ok(p)
    }

    /// Sum of `Σ_i c_i x_i²`.
    pub fn sum_of_squares_of_vars(nvars: usize, c: f64) -> Self {
        Polynomial::from_terms(nvars, (0..nvars).map(|i| {
            let mut e = vec![0; nvars];
            e[i] = 2;
            (Monomial(e), c)
        }))
        .expect("consistent dimensions")
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn add_term(&mut self, m: Monomial, coeff: f64) {
        debug_assert_eq!(m.nvars(), self.nvars);
        if coeff == 0.0 {
            return;
        }
        let entry = self.terms.entry(m);
        match entry {
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let v = *o.get() + coeff;
                if v == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = v;
                }
            }
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(coeff);
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> + '_ {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn constant_term(&self) -> f64 {
        self.coeff(&Monomial::one(self.nvars))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Smallest degree among stored terms (0 for the zero polynomial).
    pub fn min_degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).min().unwrap_or(0)
    }

    /// Degree in a single variable.
    pub fn degree_in(&self, index: usize) -> u32 {
        self.terms.keys().map(|m| m.0[index]).max().unwrap_or(0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64, PolyError> {
        if x.len() != self.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, got: x.len() });
        }
        Ok(self.eval(x))
    }

    /// Unchecked evaluation for hot loops; `x` must have `nvars` entries.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(m, c)| c * m.eval(x)).sum()
    }

    fn check_same(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            Err(PolyError::DimensionMismatch { expected: self.nvars, got: other.nvars })
        } else {
            Ok(())
        }
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        Ok(out)
    }

    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_same(other)?;
        let mut out = Polynomial::zero(self.nvars);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                out.add_term(ma.product(mb), ca * cb);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        if s == 0.0 {
            return Polynomial::zero(self.nvars);
        }
        Polynomial {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect(),
        }
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut out = Polynomial::constant(self.nvars, 1.0);
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    /// Partial derivative with respect to variable `index`.
    pub fn differentiate(&self, index: usize) -> Result<Polynomial, PolyError> {
        if index >= self.nvars {
            return Err(PolyError::VariableOutOfRange { index, nvars: self.nvars });
        }
        let mut out = Polynomial::zero(self.nvars);
        for (m, &c) in &self.terms {
            let e = m.0[index];
            if e == 0 {
                continue;
            }
            let mut exps = m.0.clone();
            exps[index] -= 1;
            out.add_term(Monomial(exps), c * e as f64);
        }
        Ok(out)
    }

    pub fn gradient(&self) -> Vec<Polynomial> {
        (0..self.nvars)
            .map(|i| self.differentiate(i).expect("index in range"))
            .collect()
    }

    /// `Σ_i ∂p/∂x_i · field_i`, the derivative of `p` along a vector field.
    pub fn lie_derivative(&self, field: &[Polynomial]) -> Result<Polynomial, PolyError> {
        if field.len() != self.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, got: field.len() });
        }
        let mut out = Polynomial::zero(self.nvars);
        for (i, fi) in field.iter().enumerate() {
            let d = self.differentiate(i)?;
            out = out.try_add(&d.try_mul(fi)?)?;
        }
        Ok(out)
    }

    /// Drops terms whose magnitude is at most `tol` times the largest coefficient.
    pub fn prune(&self, tol: f64) -> Polynomial {
        let cut = tol * self.max_abs_coeff();
        Polynomial {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter(|(_, c)| c.abs() > cut)
                .map(|(m, &c)| (m.clone(), c))
                .collect(),
        }
    }

    /// Largest coefficient difference, normalised by the largest absolute
    /// coefficient of either operand (floored at 1e-300).
    pub fn relative_distance(&self, other: &Polynomial) -> f64 {
        let diff = self - other;
        let scale = self.max_abs_coeff().max(other.max_abs_coeff()).max(1e-300);
        diff.max_abs_coeff() / scale
    }

    pub fn approx_eq(&self, other: &Polynomial, tol: f64) -> bool {
        self.nvars == other.nvars && self.relative_distance(other) <= tol
    }

    /// Places this polynomial into a larger variable space; variable `i` maps to `map[i]`.
    pub fn embed(&self, nvars: usize, map: &[usize]) -> Polynomial {
        let mut out = Polynomial::zero(nvars);
        for (m, &c) in &self.terms {
            let mut e = vec![0; nvars];
            for (i, &k) in m.0.iter().enumerate() {
                e[map[i]] += k;
            }
            out.add_term(Monomial(e), c);
        }
        out
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " {} ", if *c < 0.0 { '-' } else { '+' })?;
            } else if *c < 0.0 {
                write!(f, "-")?;
            }
            if m.is_constant() {
                write!(f, "{}", c.abs())?;
            } else {
                write!(f, "{}*{}", c.abs(), m)?;
            }
        }
        Ok(())
    }
}

impl<'a> Add<&'a Polynomial> for &'a Polynomial {
    type Output = Polynomial;
    /// Panics on a variable-count mismatch; use [`Polynomial::try_add`] to handle it.
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(rhs).expect("polynomial dimension mismatch")
    }
}

impl<'a> Sub<&'a Polynomial> for &'a Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(&rhs.scale(-1.0)).expect("polynomial dimension mismatch")
    }
}

impl<'a> Mul<&'a Polynomial> for &'a Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.try_mul(rhs).expect("polynomial dimension mismatch")
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

#[derive(Serialize, Deserialize)]
struct TermRecord {
    exponents: Vec<u32>,
    coeff: f64,
}

#[derive(Serialize, Deserialize)]
struct PolyRecord {
    nvars: usize,
    terms: Vec<TermRecord>,
}

impl Serialize for Polynomial {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PolyRecord {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(m, &c)| TermRecord { exponents: m.0.clone(), coeff: c })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polynomial {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rec = PolyRecord::deserialize(d)?;
        Polynomial::from_terms(
            rec.nvars,
            rec.terms.into_iter().map(|t| (Monomial(t.exponents), t.coeff)),
        )
        .map_err(serde::de::Error::custom)
    }
}

/// `p(x) = z(x)ᵀ Q z(x)` over an ordered monomial basis `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramRepresentation {
    basis: Vec<Monomial>,
    matrix: DMatrix<f64>,
}

impl GramRepresentation {
    /// The matrix is symmetrised on construction.
    pub fn new(basis: Vec<Monomial>, matrix: DMatrix<f64>) -> Result<Self, PolyError> {
        if matrix.nrows() != basis.len() || matrix.ncols() != basis.len() {
            return Err(PolyError::GramShape {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
                basis: basis.len(),
            });
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        Ok(GramRepresentation { basis, matrix })
    }

    /// The canonical Gram matrix of `p`: square monomials sit on the diagonal,
    /// every other monomial is split evenly over the first matching
    /// off-diagonal pair. Its trace is the sum of the coefficients of the
    /// squared basis monomials.
    pub fn canonical(p: &Polynomial, basis: Vec<Monomial>) -> Result<Self, PolyError> {
        let n = basis.len();
        let mut q = DMatrix::zeros(n, n);
        'terms: for (m, c) in p.terms() {
            if let Some(r) = m.sqrt() {
                if let Some(i) = basis.iter().position(|b| *b == r) {
                    q[(i, i)] += c;
                    continue;
                }
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    if basis[i].product(&basis[j]) == *m {
                        q[(i, j)] += c / 2.0;
                        q[(j, i)] += c / 2.0;
                        continue 'terms;
                    }
                }
            }
            return Err(PolyError::NotRepresentable(m.to_string()));
        }
        Ok(GramRepresentation { basis, matrix: q })
    }

    pub fn basis(&self) -> &[Monomial] {
        &self.basis
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.basis.is_empty() {
            return 0.0;
        }
        self.matrix
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn expand(&self) -> Polynomial {
        let nvars = self.basis.first().map(Monomial::nvars).unwrap_or(0);
        let mut out = Polynomial::zero(nvars);
        for i in 0..self.basis.len() {
            for j in 0..self.basis.len() {
                let c = self.matrix[(i, j)];
                if c != 0.0 {
                    out.add_term(self.basis[i].product(&self.basis[j]), c);
                }
            }
        }
        out
    }
}

/// Expands `basisᵀ · matrix · basis`.
pub fn gram_expand(g: &GramRepresentation) -> Polynomial {
    g.expand()
}

/// Trace of the canonical Gram matrix of `p` over the monomials of degree
/// `1..=half_degree` (or `0..=half_degree` when `include_constant`): the sum of
/// the coefficients of `b²` for each basis monomial `b`.
pub fn canonical_trace(p: &Polynomial, min_half: u32, half_degree: u32) -> f64 {
    monomial_range(p.nvars(), min_half, half_degree)
        .iter()
        .map(|b| p.coeff(&b.product(b)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(n: usize, i: usize) -> Polynomial {
        Polynomial::var(n, i)
    }

    #[test]
    fn evaluate_examples() {
        let p = &(&x(2, 0) * &x(2, 0)) + &x(2, 1).scale(2.0);
        assert_eq!(p.evaluate(&[1.0, 1.0]).unwrap(), 3.0);
        assert_eq!(Polynomial::zero(3).evaluate(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        // (x1+4)^2 + (x2-5)^2 - 4 at (-4, 5)
        let a = &x(2, 0) + &Polynomial::constant(2, 4.0);
        let b = &x(2, 1) - &Polynomial::constant(2, 5.0);
        let q1 = &(&(&a * &a) + &(&b * &b)) - &Polynomial::constant(2, 4.0);
        assert_eq!(q1.evaluate(&[-4.0, 5.0]).unwrap(), -4.0);
        assert!(matches!(p.evaluate(&[1.0]), Err(PolyError::DimensionMismatch { .. })));
    }

    #[test]
    fn multiply_examples() {
        let one = Polynomial::constant(1, 1.0);
        let p = &(&x(1, 0) + &one) * &(&x(1, 0) - &one);
        let expected = &x(1, 0).pow(2) - &one;
        assert_eq!(p, expected);
        assert!((&p * &Polynomial::zero(1)).is_zero());
        let s = &x(2, 0) + &x(2, 1);
        let sq = &s * &s;
        assert_eq!(sq.coeff(&Monomial::new(vec![1, 1])), 2.0);
        assert_eq!(sq.coeff(&Monomial::new(vec![2, 0])), 1.0);
        assert_eq!(sq.coeff(&Monomial::new(vec![0, 2])), 1.0);
        assert_eq!(sq.num_terms(), 3);
        assert!(Polynomial::zero(1).try_mul(&Polynomial::zero(2)).is_err());
    }

    #[test]
    fn differentiate_examples() {
        let p = &x(2, 0).pow(2) * &x(2, 1);
        assert_eq!(p.differentiate(0).unwrap(), (&x(2, 0) * &x(2, 1)).scale(2.0));
        assert!(x(2, 0).pow(2).differentiate(1).unwrap().is_zero());
        let v = Polynomial::sum_of_squares_of_vars(2, 1.0);
        assert_eq!(v.differentiate(0).unwrap(), x(2, 0).scale(2.0));
        assert!(Polynomial::constant(2, 3.0).differentiate(0).unwrap().is_zero());
        assert!(v.differentiate(2).is_err());
    }

    #[test]
    fn lie_derivative_examples() {
        let v = x(1, 0).pow(2);
        assert_eq!(v.lie_derivative(&[-&x(1, 0)]).unwrap(), x(1, 0).pow(2).scale(-2.0));
        let v2 = Polynomial::sum_of_squares_of_vars(2, 1.0);
        assert!(v2.lie_derivative(&[x(2, 1), -&x(2, 0)]).unwrap().is_zero());
        let field = [&(-&x(2, 0)) + &x(2, 1), -&x(2, 1)];
        let expected = Polynomial::from_terms(
            2,
            [
                (Monomial::new(vec![2, 0]), -2.0),
                (Monomial::new(vec![1, 1]), 2.0),
                (Monomial::new(vec![0, 2]), -2.0),
            ],
        )
        .unwrap();
        assert_eq!(v2.lie_derivative(&field).unwrap(), expected);
        assert!(v2.lie_derivative(&[x(2, 0)]).is_err());
    }

    #[test]
    fn basis_enumeration() {
        let b = monomial_basis(1, 2);
        assert_eq!(b, vec![Monomial::new(vec![0]), Monomial::new(vec![1]), Monomial::new(vec![2])]);
        let b = monomial_basis(2, 1);
        assert_eq!(
            b,
            vec![Monomial::new(vec![0, 0]), Monomial::new(vec![1, 0]), Monomial::new(vec![0, 1])]
        );
        assert_eq!(monomial_basis(2, 2).len(), 6);
        assert_eq!(monomial_basis(3, 4).len(), 35);
        let b = monomial_basis(3, 3);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn gram_examples() {
        let basis = monomial_basis(1, 1);
        let g = GramRepresentation::new(basis.clone(), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(gram_expand(&g), &Polynomial::constant(1, 1.0) + &x(1, 0).pow(2));

        let g = GramRepresentation::new(vec![Monomial::new(vec![1])], DMatrix::from_element(1, 1, 4.0))
            .unwrap();
        assert_eq!(g.expand(), x(1, 0).pow(2).scale(4.0));
        assert_eq!(g.trace(), 4.0);

        let g = GramRepresentation::new(basis.clone(), DMatrix::from_element(2, 2, 1.0)).unwrap();
        let s = &x(1, 0) + &Polynomial::constant(1, 1.0);
        assert_eq!(g.expand(), &s * &s);

        assert!(GramRepresentation::new(basis, DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn canonical_gram_reproduces_and_traces() {
        let p = Polynomial::from_terms(
            2,
            [
                (Monomial::new(vec![0, 0]), 3.0),
                (Monomial::new(vec![1, 0]), -1.0),
                (Monomial::new(vec![2, 0]), -2.0),
                (Monomial::new(vec![1, 1]), 0.5),
                (Monomial::new(vec![0, 4]), 7.0),
                (Monomial::new(vec![3, 1]), 1.0),
            ],
        )
        .unwrap();
        let g = GramRepresentation::canonical(&p, monomial_basis(2, 2)).unwrap();
        assert!(g.expand().approx_eq(&p, 1e-12));
        assert_eq!(g.trace(), 3.0 - 2.0 + 7.0);
        assert_eq!(canonical_trace(&p, 0, 2), g.trace());
        assert!(GramRepresentation::canonical(&x(2, 0).pow(5), monomial_basis(2, 2)).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let p = &(&x(2, 0) * &x(2, 1)).scale(-1.5) + &Polynomial::constant(2, 0.25);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"exponents\""));
        let q: Polynomial = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }
}
