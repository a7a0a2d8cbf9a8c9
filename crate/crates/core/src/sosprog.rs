//! Sum-of-squares programs: decision polynomials, SOS constraints affine in
//! the unknowns, compilation to a semidefinite program (PSD blocks plus
//! linear equalities) and a posteriori certificate checks.
//!
//! Every unknown is a scalar variable: free/nonnegative scalars, the
//! coefficients of free decision polynomials, and the upper-triangular
//! entries of Gram blocks. An SOS constraint `p ∈ Σ` introduces a Gram block
//! `Q ⪰ 0` over a monomial basis `z` and one equality per monomial matching
//! the coefficients of `p` and `zᵀQz`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{monomial_range, GramRepresentation, Monomial, Polynomial};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SosError {
    #[error("bilinear term: product of unknowns {left} and {right}")]
    Bilinear { left: String, right: String },
    #[error("SOS decision polynomial '{name}' needs an even degree, got {degree}")]
    OddSosDegree { name: String, degree: u32 },
    #[error("expression has {got} variables, program has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("program has no constraints")]
    Empty,
}

/// Index of a scalar unknown inside a program.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarKind {
    Free,
    NonNegative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolyKind {
    Free,
    Sos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// A linear function `constant + Σ coeff·var` of the scalar unknowns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearForm {
    pub constant: f64,
    pub terms: BTreeMap<VarId, f64>,
}

impl LinearForm {
    pub fn constant(c: f64) -> Self {
        LinearForm { constant: c, terms: BTreeMap::new() }
    }

    pub fn var(v: VarId) -> Self {
        let mut f = LinearForm::default();
        f.terms.insert(v, 1.0);
        f
    }

    pub fn add(&self, other: &LinearForm) -> LinearForm {
        let mut out = self.clone();
        out.constant += other.constant;
        for (v, c) in &other.terms {
            *out.terms.entry(*v).or_insert(0.0) += c;
        }
        out
    }

    pub fn scale(&self, s: f64) -> LinearForm {
        LinearForm {
            constant: self.constant * s,
            terms: self.terms.iter().map(|(v, c)| (*v, c * s)).collect(),
        }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| c * values[v.0]).sum::<f64>()
    }
}

/// Polynomial expression affine in the program's unknowns:
/// `constant(x) + Σ_v var_v · poly_v(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinePoly {
    nvars: usize,
    constant: Polynomial,
    linear: BTreeMap<VarId, Polynomial>,
    unknowns: BTreeSet<String>,
}

impl AffinePoly {
    pub fn from_poly(p: Polynomial) -> Self {
        AffinePoly {
            nvars: p.nvars(),
            constant: p,
            linear: BTreeMap::new(),
            unknowns: BTreeSet::new(),
        }
    }

    pub fn zero(nvars: usize) -> Self {
        Self::from_poly(Polynomial::zero(nvars))
    }

    fn from_var(owner: &str, v: VarId, p: Polynomial) -> Self {
        let mut a = Self::zero(p.nvars());
        a.unknowns.insert(owner.to_string());
        if !p.is_zero() {
            a.linear.insert(v, p);
        }
        a
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn constant_part(&self) -> &Polynomial {
        &self.constant
    }

    pub fn is_constant(&self) -> bool {
        self.linear.is_empty()
    }

    /// Names of the decision objects this expression depends on.
    pub fn unknowns(&self) -> impl Iterator<Item = &str> {
        self.unknowns.iter().map(String::as_str)
    }

    pub fn degree(&self) -> u32 {
        self.linear
            .values()
            .map(Polynomial::degree)
            .chain(std::iter::once(self.constant.degree()))
            .max()
            .unwrap_or(0)
    }

    pub fn add(&self, other: &AffinePoly) -> AffinePoly {
        let mut out = self.clone();
        out.constant = &out.constant + &other.constant;
        for (v, p) in &other.linear {
            let sum = match out.linear.get(v) {
                Some(q) => q + p,
                None => p.clone(),
            };
            if sum.is_zero() {
                out.linear.remove(v);
            } else {
                out.linear.insert(*v, sum);
            }
        }
        out.unknowns.extend(other.unknowns.iter().cloned());
        out
    }

    pub fn sub(&self, other: &AffinePoly) -> AffinePoly {
        self.add(&other.scale(-1.0))
    }

    pub fn add_poly(&self, p: &Polynomial) -> AffinePoly {
        let mut out = self.clone();
        out.constant = &out.constant + p;
        out
    }

    pub fn scale(&self, s: f64) -> AffinePoly {
        AffinePoly {
            nvars: self.nvars,
            constant: self.constant.scale(s),
            linear: if s == 0.0 {
                BTreeMap::new()
            } else {
                self.linear.iter().map(|(v, p)| (*v, p.scale(s))).collect()
            },
            unknowns: self.unknowns.clone(),
        }
    }

    pub fn mul_poly(&self, p: &Polynomial) -> AffinePoly {
        let mut linear = BTreeMap::new();
        for (v, q) in &self.linear {
            let r = q * p;
            if !r.is_zero() {
                linear.insert(*v, r);
            }
        }
        AffinePoly {
            nvars: self.nvars,
            constant: &self.constant * p,
            linear,
            unknowns: self.unknowns.clone(),
        }
    }

    /// Product of two affine expressions; rejected when both carry unknowns.
    pub fn mul(&self, other: &AffinePoly) -> Result<AffinePoly, SosError> {
        match (self.is_constant(), other.is_constant()) {
            (true, _) => Ok(other.mul_poly(&self.constant)),
            (_, true) => Ok(self.mul_poly(&other.constant)),
            _ => Err(SosError::Bilinear {
                left: self.unknowns.iter().cloned().collect::<Vec<_>>().join(","),
                right: other.unknowns.iter().cloned().collect::<Vec<_>>().join(","),
            }),
        }
    }

    /// Derivative along a known polynomial vector field.
    pub fn lie_derivative(&self, field: &[Polynomial]) -> AffinePoly {
        let mut out = AffinePoly::from_poly(
            self.constant.lie_derivative(field).expect("field dimension"),
        );
        for (v, p) in &self.linear {
            let d = p.lie_derivative(field).expect("field dimension");
            if !d.is_zero() {
                out.linear.insert(*v, d);
            }
        }
        out.unknowns = self.unknowns.clone();
        out
    }

    /// Partial derivative in state variable `index`.
    pub fn differentiate(&self, index: usize) -> AffinePoly {
        let mut out = AffinePoly::from_poly(self.constant.differentiate(index).expect("index"));
        for (v, p) in &self.linear {
            let d = p.differentiate(index).expect("index");
            if !d.is_zero() {
                out.linear.insert(*v, d);
            }
        }
        out.unknowns = self.unknowns.clone();
        out
    }

    /// The coefficient of monomial `m` as a linear form in the unknowns.
    pub fn coefficient(&self, m: &Monomial) -> LinearForm {
        let mut f = LinearForm::constant(self.constant.coeff(m));
        for (v, p) in &self.linear {
            let c = p.coeff(m);
            if c != 0.0 {
                f.terms.insert(*v, c);
            }
        }
        f
    }

    pub fn value(&self, values: &[f64]) -> Polynomial {
        let mut out = self.constant.clone();
        for (v, p) in &self.linear {
            out = &out + &p.scale(values[v.0]);
        }
        out
    }

    fn support(&self) -> BTreeSet<Monomial> {
        let mut s: BTreeSet<Monomial> = self.constant.terms().map(|(m, _)| m.clone()).collect();
        for p in self.linear.values() {
            s.extend(p.terms().map(|(m, _)| m.clone()));
        }
        s
    }
}

/// Handle to a decision polynomial declared in a program.
#[derive(Clone, Debug)]
pub struct DecisionPoly {
    pub name: String,
    pub kind: PolyKind,
    /// Support monomials for free polynomials; Gram basis for SOS polynomials.
    pub basis: Vec<Monomial>,
    pub gram_block: Option<usize>,
    expr: AffinePoly,
}

impl DecisionPoly {
    pub fn expr(&self) -> &AffinePoly {
        &self.expr
    }

    /// Number of scalar coefficients (Gram entries for SOS polynomials).
    pub fn num_coefficients(&self) -> usize {
        match self.kind {
            PolyKind::Free => self.basis.len(),
            PolyKind::Sos => self.basis.len() * (self.basis.len() + 1) / 2,
        }
    }
}

/// Handle to a scalar unknown.
#[derive(Clone, Debug)]
pub struct DecisionScalar {
    pub name: String,
    pub var: VarId,
    nvars: usize,
}

impl DecisionScalar {
    pub fn form(&self) -> LinearForm {
        LinearForm::var(self.var)
    }

    /// The scalar times a known polynomial.
    pub fn times(&self, p: &Polynomial) -> AffinePoly {
        debug_assert_eq!(p.nvars(), self.nvars);
        AffinePoly::from_var(&self.name, self.var, p.clone())
    }
}

#[derive(Clone, Debug)]
struct GramBlock {
    name: String,
    basis: Vec<Monomial>,
    first_var: usize,
}

impl GramBlock {
    fn size(&self) -> usize {
        self.basis.len()
    }

    /// Variable holding entry `(i, j)`; upper triangle, column-major.
    fn var(&self, i: usize, j: usize) -> VarId {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        VarId(self.first_var + c * (c + 1) / 2 + r)
    }
}

#[derive(Clone, Debug)]
struct Constraint {
    name: String,
    expr: AffinePoly,
    block: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ConstraintId(pub usize);

#[derive(Clone, Debug)]
struct LinearRow {
    form: LinearForm,
    lower: Option<f64>,
    upper: Option<f64>,
}

/// A sum-of-squares program under construction.
#[derive(Clone, Debug)]
pub struct SosProgram {
    nvars: usize,
    kinds: Vec<ScalarKind>,
    blocks: Vec<GramBlock>,
    sos_polys: Vec<usize>,
    constraints: Vec<Constraint>,
    equalities: Vec<(String, AffinePoly)>,
    linear_rows: Vec<LinearRow>,
    objective: Option<(Sense, LinearForm)>,
}

impl SosProgram {
    pub fn new(nvars: usize) -> Self {
        SosProgram {
            nvars,
            kinds: Vec::new(),
            blocks: Vec::new(),
            sos_polys: Vec::new(),
            constraints: Vec::new(),
            equalities: Vec::new(),
            linear_rows: Vec::new(),
            objective: None,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn num_scalars(&self) -> usize {
        self.kinds.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    fn new_var(&mut self, kind: ScalarKind) -> VarId {
        self.kinds.push(kind);
        VarId(self.kinds.len() - 1)
    }

    pub fn scalar(&mut self, name: &str, kind: ScalarKind) -> DecisionScalar {
        let var = self.new_var(kind);
        DecisionScalar { name: name.to_string(), var, nvars: self.nvars }
    }

    fn new_block(&mut self, name: &str, basis: Vec<Monomial>) -> usize {
        let first_var = self.kinds.len();
        let n = basis.len();
        for _ in 0..n * (n + 1) / 2 {
            self.kinds.push(ScalarKind::Free);
        }
        self.blocks.push(GramBlock { name: name.to_string(), basis, first_var });
        self.blocks.len() - 1
    }

    /// `zᵀQz` as an affine expression of the block's entries.
    fn block_expr(&self, block: usize) -> AffinePoly {
        let b = &self.blocks[block];
        let mut linear = BTreeMap::new();
        for j in 0..b.size() {
            for i in 0..=j {
                let w = if i == j { 1.0 } else { 2.0 };
                linear.insert(b.var(i, j), Polynomial::monomial(b.basis[i].product(&b.basis[j]), w));
            }
        }
        let mut unknowns = BTreeSet::new();
        unknowns.insert(b.name.clone());
        AffinePoly { nvars: self.nvars, constant: Polynomial::zero(self.nvars), linear, unknowns }
    }

    /// A free polynomial with one coefficient per support monomial.
    pub fn free_poly(&mut self, name: &str, support: Vec<Monomial>) -> DecisionPoly {
        let mut expr = AffinePoly::zero(self.nvars);
        expr.unknowns.insert(name.to_string());
        for m in &support {
            let v = self.new_var(ScalarKind::Free);
            expr.linear.insert(v, Polynomial::monomial(m.clone(), 1.0));
        }
        DecisionPoly { name: name.to_string(), kind: PolyKind::Free, basis: support, gram_block: None, expr }
    }

    /// An SOS polynomial `zᵀQz`, `Q ⪰ 0`, over the given Gram basis.
    pub fn sos_poly(&mut self, name: &str, gram_basis: Vec<Monomial>) -> DecisionPoly {
        let block = self.new_block(name, gram_basis.clone());
        self.sos_polys.push(block);
        let expr = self.block_expr(block);
        DecisionPoly { name: name.to_string(), kind: PolyKind::Sos, basis: gram_basis, gram_block: Some(block), expr }
    }

    /// Declares a decision polynomial over the full graded-lex basis. SOS
    /// polynomials of degree `2d` get a Gram block over monomials of degree ≤ d.
    pub fn declare_poly(&mut self, name: &str, degree: u32, kind: PolyKind) -> Result<DecisionPoly, SosError> {
        match kind {
            PolyKind::Free => Ok(self.free_poly(name, monomial_range(self.nvars, 0, degree))),
            PolyKind::Sos => {
                if degree % 2 != 0 {
                    return Err(SosError::OddSosDegree { name: name.to_string(), degree });
                }
                Ok(self.sos_poly(name, monomial_range(self.nvars, 0, degree / 2)))
            }
        }
    }

    /// Requires `expr ∈ Σ` with the Gram basis of all monomials of degree
    /// `0..=⌈deg/2⌉`.
    pub fn add_sos_constraint(&mut self, name: &str, expr: AffinePoly) -> Result<ConstraintId, SosError> {
        self.add_sos_constraint_with_min_degree(name, expr, 0)
    }

    /// As [`add_sos_constraint`](Self::add_sos_constraint) but the Gram basis
    /// starts at degree `min_half`; use 1 for expressions that must vanish to
    /// second order at the origin.
    pub fn add_sos_constraint_with_min_degree(
        &mut self,
        name: &str,
        expr: AffinePoly,
        min_half: u32,
    ) -> Result<ConstraintId, SosError> {
        if expr.nvars != self.nvars {
            return Err(SosError::DimensionMismatch { expected: self.nvars, got: expr.nvars });
        }
        let half = expr.degree().div_ceil(2);
        let basis = monomial_range(self.nvars, min_half.min(half), half);
        self.add_sos_constraint_with_basis(name, expr, basis)
    }

    pub fn add_sos_constraint_with_basis(
        &mut self,
        name: &str,
        expr: AffinePoly,
        basis: Vec<Monomial>,
    ) -> Result<ConstraintId, SosError> {
        if expr.nvars != self.nvars {
            return Err(SosError::DimensionMismatch { expected: self.nvars, got: expr.nvars });
        }
        let block = self.new_block(name, basis);
        self.constraints.push(Constraint { name: name.to_string(), expr, block });
        Ok(ConstraintId(self.constraints.len() - 1))
    }

    /// Requires `expr` to vanish identically (coefficient by coefficient).
    pub fn add_poly_equality(&mut self, name: &str, expr: AffinePoly) -> Result<(), SosError> {
        if expr.nvars != self.nvars {
            return Err(SosError::DimensionMismatch { expected: self.nvars, got: expr.nvars });
        }
        self.equalities.push((name.to_string(), expr));
        Ok(())
    }

    /// `lower ≤ form ≤ upper`.
    pub fn add_linear_bounds(&mut self, form: LinearForm, lower: Option<f64>, upper: Option<f64>) {
        self.linear_rows.push(LinearRow { form, lower, upper });
    }

    /// Bounds every coefficient of a free decision polynomial by `±bound`.
    pub fn bound_coefficients(&mut self, p: &DecisionPoly, bound: f64) {
        let vars: Vec<VarId> = p.expr.linear.keys().copied().collect();
        for v in vars {
            self.add_linear_bounds(LinearForm::var(v), Some(-bound), Some(bound));
        }
    }

    pub fn add_linear_equality(&mut self, form: LinearForm, value: f64) {
        self.linear_rows.push(LinearRow { form, lower: Some(value), upper: Some(value) });
    }

    pub fn set_objective(&mut self, sense: Sense, form: LinearForm) {
        self.objective = Some((sense, form));
    }

    /// Gram matrix of an SOS decision polynomial or constraint block from a solution.
    fn block_matrix(&self, block: usize, values: &[f64]) -> DMatrix<f64> {
        let b = &self.blocks[block];
        let n = b.size();
        DMatrix::from_fn(n, n, |i, j| values[b.var(i, j).0])
    }

    pub fn poly_value(&self, p: &DecisionPoly, values: &[f64]) -> Polynomial {
        p.expr.value(values)
    }

    pub fn gram_value(&self, p: &DecisionPoly, values: &[f64]) -> Option<GramRepresentation> {
        p.gram_block.map(|b| {
            GramRepresentation::new(self.blocks[b].basis.clone(), self.block_matrix(b, values))
                .expect("block shape")
        })
    }

    pub fn constraint_gram(&self, id: ConstraintId, values: &[f64]) -> GramRepresentation {
        let c = &self.constraints[id.0];
        GramRepresentation::new(self.blocks[c.block].basis.clone(), self.block_matrix(c.block, values))
            .expect("block shape")
    }

    pub fn constraint_value(&self, id: ConstraintId, values: &[f64]) -> Polynomial {
        self.constraints[id.0].expr.value(values)
    }

    pub fn constraint_name(&self, id: ConstraintId) -> &str {
        &self.constraints[id.0].name
    }

    /// Lowers the program to conic form.
    pub fn compile(&self) -> Result<SdpInstance, SosError> {
        if self.constraints.is_empty()
            && self.sos_polys.is_empty()
            && self.linear_rows.is_empty()
            && self.equalities.is_empty()
        {
            return Err(SosError::Empty);
        }
        let nx = self.kinds.len();
        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();

        // coefficient matching, one row per monomial
        let mut n_eq = 0;
        for c in &self.constraints {
            let block = &self.blocks[c.block];
            let mut entries: BTreeMap<Monomial, Vec<(usize, f64)>> = BTreeMap::new();
            for m in c.expr.support() {
                entries.entry(m).or_default();
            }
            for j in 0..block.size() {
                for i in 0..=j {
                    let w = if i == j { 1.0 } else { 2.0 };
                    entries
                        .entry(block.basis[i].product(&block.basis[j]))
                        .or_default()
                        .push((block.var(i, j).0, -w));
                }
            }
            let scale = constraint_scale(&c.expr);
            for (m, gram_terms) in entries {
                let form = c.expr.coefficient(&m);
                let mut row: Vec<(usize, f64)> =
                    form.terms.iter().map(|(v, a)| (v.0, a / scale)).collect();
                row.extend(gram_terms.into_iter().map(|(v, a)| (v, a / scale)));
                rows.push((row, -form.constant / scale));
                n_eq += 1;
            }
        }
        for (_, e) in &self.equalities {
            let scale = constraint_scale(e);
            for m in e.support() {
                let form = e.coefficient(&m);
                let row = form.terms.iter().map(|(v, a)| (v.0, a / scale)).collect();
                rows.push((row, -form.constant / scale));
                n_eq += 1;
            }
        }
        for r in &self.linear_rows {
            if let (Some(lo), Some(hi)) = (r.lower, r.upper) {
                if lo == hi {
                    let row = r.form.terms.iter().map(|(v, a)| (v.0, *a)).collect();
                    rows.push((row, lo - r.form.constant));
                    n_eq += 1;
                }
            }
        }

        // inequalities as Ax + s = b, s ≥ 0
        let mut n_ineq = 0;
        for (i, k) in self.kinds.iter().enumerate() {
            if *k == ScalarKind::NonNegative {
                rows.push((vec![(i, -1.0)], 0.0));
                n_ineq += 1;
            }
        }
        for r in &self.linear_rows {
            if r.lower.is_some() && r.lower == r.upper {
                continue;
            }
            if let Some(hi) = r.upper {
                rows.push((r.form.terms.iter().map(|(v, a)| (v.0, *a)).collect(), hi - r.form.constant));
                n_ineq += 1;
            }
            if let Some(lo) = r.lower {
                rows.push((r.form.terms.iter().map(|(v, a)| (v.0, -*a)).collect(), r.form.constant - lo));
                n_ineq += 1;
            }
        }

        // PSD blocks in the solver's scaled upper-triangular layout
        let mut cones = Vec::new();
        if n_eq > 0 {
            cones.push(ConeSpec::Zero(n_eq));
        }
        if n_ineq > 0 {
            cones.push(ConeSpec::NonNegative(n_ineq));
        }
        for b in &self.blocks {
            let n = b.size();
            if n == 0 {
                continue;
            }
            for j in 0..n {
                for i in 0..=j {
                    let w = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                    rows.push((vec![(b.var(i, j).0, -w)], 0.0));
                }
            }
            cones.push(ConeSpec::Psd(n));
        }

        let mut q = vec![0.0; nx];
        let (sense, constant) = match &self.objective {
            Some((sense, form)) => {
                let sign = if *sense == Sense::Maximize { -1.0 } else { 1.0 };
                for (v, a) in &form.terms {
                    q[v.0] += sign * a;
                }
                (*sense, form.constant)
            }
            None => (Sense::Minimize, 0.0),
        };

        let mut triplets = Vec::new();
        let mut b = Vec::with_capacity(rows.len());
        for (r, (row, rhs)) in rows.into_iter().enumerate() {
            let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
            for (c, a) in row {
                *merged.entry(c).or_insert(0.0) += a;
            }
            for (c, a) in merged {
                if a != 0.0 {
                    triplets.push((r, c, a));
                }
            }
            b.push(rhs);
        }

        Ok(SdpInstance { num_vars: nx, triplets, b, cones, q, sense, objective_constant: constant })
    }

    /// Checks every Gram block of a solution: PSD up to tolerance, and for
    /// constraints, coefficient agreement between `p` and `zᵀQz`.
    pub fn verify_certificate(&self, values: &[f64]) -> VerificationReport {
        self.verify_with(values, &VerifyTolerances::default())
    }

    pub fn verify_with(&self, values: &[f64], tol: &VerifyTolerances) -> VerificationReport {
        let mut checks = Vec::new();
        for (k, c) in self.constraints.iter().enumerate() {
            let gram = self.constraint_gram(ConstraintId(k), values);
            let p = c.expr.value(values);
            let min_eig = gram.min_eigenvalue();
            let expanded = gram.expand();
            let scale = p.max_abs_coeff().max(expanded.max_abs_coeff()).max(1e-12);
            let residual = (&p - &expanded).max_abs_coeff() / scale;
            let eig_floor = -tol.min_eigenvalue * gram_scale(&gram);
            checks.push(ConstraintCheck {
                name: c.name.clone(),
                min_eigenvalue: min_eig,
                residual,
                passed: min_eig >= eig_floor && residual <= tol.residual,
            });
        }
        for (name, e) in &self.equalities {
            let p = e.value(values);
            let scale = constraint_scale(e).max(1.0);
            let residual = p.max_abs_coeff() / scale;
            checks.push(ConstraintCheck {
                name: name.clone(),
                min_eigenvalue: 0.0,
                residual,
                passed: residual <= tol.residual,
            });
        }
        for &block in &self.sos_polys {
            let b = &self.blocks[block];
            let gram = GramRepresentation::new(b.basis.clone(), self.block_matrix(block, values))
                .expect("block shape");
            let min_eig = gram.min_eigenvalue();
            checks.push(ConstraintCheck {
                name: b.name.clone(),
                min_eigenvalue: min_eig,
                residual: 0.0,
                passed: min_eig >= -tol.min_eigenvalue * gram_scale(&gram),
            });
        }
        let passed = checks.iter().all(|c| c.passed);
        VerificationReport { checks, passed }
    }

    /// Compile, solve, and verify in one go.
    pub fn solve(&self, settings: &SolverSettings) -> Result<SolveResult, SosError> {
        let t = Instant::now();
        let instance = self.compile()?;
        let compiled = t.elapsed().as_secs_f64();
        let mut result = solve(&instance, settings);
        log::debug!(
            "sdp: {} vars, {} rows, compile {compiled:.3}s, solve {:.3}s, {} iters, {:?}",
            instance.num_vars,
            instance.num_rows(),
            result.solve_time,
            result.iterations,
            result.status
        );
        let candidate = matches!(result.status, SolveStatus::Optimal | SolveStatus::Inaccurate);
        if candidate && result.values.iter().all(|v| v.is_finite()) {
            let report = self.verify_certificate(&result.values);
            if !report.passed && result.status == SolveStatus::Optimal {
                log::debug!("solution failed verification: {:?}", report.failures());
                result.status = SolveStatus::Inaccurate;
            }
            result.verification = Some(report);
        }
        Ok(result)
    }

    /// Solves, then re-solves as a feasibility problem with the objective held
    /// within `rel · max(1, |obj*|)` of the optimum. Optimal points of these
    /// programs sit on the PSD boundary; the second solve lands in the relative
    /// interior, which survives verification. Falls back to the first result
    /// when the second is not usable.
    pub fn solve_with_backoff(&self, settings: &SolverSettings, rel: f64) -> Result<SolveResult, SosError> {
        let first = self.solve(settings)?;
        let Some((sense, form)) = self.objective.clone() else {
            return Ok(first);
        };
        let candidate = matches!(first.status, SolveStatus::Optimal | SolveStatus::Inaccurate);
        if !candidate || !first.objective.is_finite() {
            return Ok(first);
        }
        let slack = rel * first.objective.abs().max(1.0);
        let mut relaxed = self.clone();
        relaxed.objective = None;
        match sense {
            Sense::Maximize => relaxed.add_linear_bounds(form.clone(), Some(first.objective - slack), None),
            Sense::Minimize => relaxed.add_linear_bounds(form.clone(), None, Some(first.objective + slack)),
        }
        let mut second = relaxed.solve(settings)?;
        if second.is_usable() {
            second.objective = form.eval(&second.values);
            second.iterations += first.iterations;
            second.solve_time += first.solve_time;
            Ok(second)
        } else {
            Ok(first)
        }
    }
}

fn gram_scale(g: &GramRepresentation) -> f64 {
    g.matrix().iter().fold(1.0_f64, |a, v| a.max(v.abs()))
}

/// Row scale for a constraint: its largest constant coefficient, falling back
/// to the largest unknown coefficient.
fn constraint_scale(expr: &AffinePoly) -> f64 {
    let c = expr.constant.max_abs_coeff();
    if c > 0.0 {
        return c;
    }
    let l = expr.linear.values().fold(0.0_f64, |a, p| a.max(p.max_abs_coeff()));
    if l > 0.0 {
        l
    } else {
        1.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyTolerances {
    /// Smallest admissible Gram eigenvalue is `-min_eigenvalue · max(1, max|Q_ij|)`.
    pub min_eigenvalue: f64,
    /// Largest admissible relative coefficient mismatch.
    pub residual: f64,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        VerifyTolerances { min_eigenvalue: 1e-7, residual: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub min_eigenvalue: f64,
    pub residual: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<ConstraintCheck>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn merge(&mut self, other: VerificationReport) {
        self.passed &= other.passed;
        self.checks.extend(other.checks);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConeSpec {
    Zero(usize),
    NonNegative(usize),
    Psd(usize),
}

/// `min/max qᵀx + const  s.t.  Ax + s = b,  s ∈ K`, with `K` a product of
/// zero, nonnegative and PSD-triangle cones in row order.
#[derive(Clone, Debug, PartialEq)]
pub struct SdpInstance {
    pub num_vars: usize,
    pub triplets: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
    pub cones: Vec<ConeSpec>,
    /// Minimisation cost (negated for maximisation problems).
    pub q: Vec<f64>,
    pub sense: Sense,
    pub objective_constant: f64,
}

impl SdpInstance {
    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    pub fn num_equalities(&self) -> usize {
        self.cones
            .iter()
            .map(|c| if let ConeSpec::Zero(n) = c { *n } else { 0 })
            .sum()
    }

    pub fn psd_block_sizes(&self) -> Vec<usize> {
        self.cones
            .iter()
            .filter_map(|c| if let ConeSpec::Psd(n) = c { Some(*n) } else { None })
            .collect()
    }

    /// Plain-text sparse dump for offline solver comparison.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# sparse conic instance: min q'x s.t. A x + s = b, s in K");
        let _ = writeln!(s, "vars {}", self.num_vars);
        let _ = writeln!(s, "rows {}", self.num_rows());
        let cones: Vec<String> = self
            .cones
            .iter()
            .map(|c| match c {
                ConeSpec::Zero(n) => format!("zero:{n}"),
                ConeSpec::NonNegative(n) => format!("nonneg:{n}"),
                ConeSpec::Psd(n) => format!("psd:{n}"),
            })
            .collect();
        let _ = writeln!(s, "cones {}", cones.join(" "));
        let _ = writeln!(
            s,
            "sense {} constant {:e}",
            if self.sense == Sense::Maximize { "max" } else { "min" },
            self.objective_constant
        );
        for (i, v) in self.q.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(s, "q {i} {v:e}");
            }
        }
        for (r, c, v) in &self.triplets {
            let _ = writeln!(s, "A {r} {c} {v:e}");
        }
        for (r, v) in self.b.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(s, "b {r} {v:e}");
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Inaccurate,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub max_iter: u32,
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { max_iter: 200, tol_gap: 1e-8, tol_feas: 1e-8, verbose: false }
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub values: Vec<f64>,
    /// Objective in the program's own sense, constant included.
    pub objective: f64,
    pub iterations: u32,
    pub solve_time: f64,
    pub verification: Option<VerificationReport>,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Optimal, or inaccurate but with every Gram block verified.
    pub fn is_usable(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::Inaccurate)
            && self.verification.as_ref().is_some_and(|v| v.passed)
    }
}

/// Runs the conic solver on a compiled instance.
pub fn solve(instance: &SdpInstance, settings: &SolverSettings) -> SolveResult {
    let started = Instant::now();
    let failed = |msg: &str| {
        log::warn!("conic solver failure: {msg}");
        SolveResult {
            status: SolveStatus::Failed,
            values: vec![0.0; instance.num_vars],
            objective: f64::NAN,
            iterations: 0,
            solve_time: started.elapsed().as_secs_f64(),
            verification: None,
        }
    };
    let n = instance.num_vars;
    let m = instance.num_rows();
    if n == 0 {
        return failed("no variables");
    }
    let p = CscMatrix::<f64>::zeros((n, n));
    let a = csc_from_triplets(m, n, &instance.triplets);
    let cones: Vec<SupportedConeT<f64>> = instance
        .cones
        .iter()
        .map(|c| match *c {
            ConeSpec::Zero(k) => SupportedConeT::ZeroConeT(k),
            ConeSpec::NonNegative(k) => SupportedConeT::NonnegativeConeT(k),
            ConeSpec::Psd(k) => SupportedConeT::PSDTriangleConeT(k),
        })
        .collect();
    let opts = match DefaultSettingsBuilder::default()
        .verbose(settings.verbose)
        .max_iter(settings.max_iter)
        .tol_gap_abs(settings.tol_gap)
        .tol_gap_rel(settings.tol_gap)
        .tol_feas(settings.tol_feas)
        .build()
    {
        Ok(o) => o,
        Err(e) => return failed(&e.to_string()),
    };
    let mut solver = match DefaultSolver::new(&p, &instance.q, &a, &instance.b, &cones, opts) {
        Ok(s) => s,
        Err(e) => return failed(&format!("{e:?}")),
    };
    solver.solve();
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => SolveStatus::Inaccurate,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        SolverStatus::MaxIterations | SolverStatus::MaxTime | SolverStatus::InsufficientProgress => {
            SolveStatus::Inaccurate
        }
        _ => SolveStatus::Failed,
    };
    let values = sol.x.clone();
    let raw: f64 = instance.q.iter().zip(&values).map(|(a, b)| a * b).sum();
    let objective = match instance.sense {
        Sense::Minimize => raw + instance.objective_constant,
        Sense::Maximize => -raw + instance.objective_constant,
    };
    SolveResult {
        status,
        values,
        objective,
        iterations: sol.iterations,
        solve_time: started.elapsed().as_secs_f64(),
        verification: None,
    }
}

fn csc_from_triplets(m: usize, n: usize, triplets: &[(usize, usize, f64)]) -> CscMatrix<f64> {
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(r, c, v) in triplets {
        cols[c].push((r, v));
    }
    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::with_capacity(triplets.len());
    let mut nzval = Vec::with_capacity(triplets.len());
    colptr.push(0);
    for col in &mut cols {
        col.sort_by_key(|e| e.0);
        for &(r, v) in col.iter() {
            rowval.push(r);
            nzval.push(v);
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}
