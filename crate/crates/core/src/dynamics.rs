//! System specification: a small expression language for the true dynamics
//! `ẋ = f(x) + g(x)u + d(x)`, Chebyshev replacement of marked non-polynomial
//! terms, and synthetic measurement generation.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{fit_interpolant, remainder_bound, sup_error, ApproxError, ChebyshevInterpolant};
use crate::poly::Polynomial;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("syntax error at column {col}: {msg}")]
    Syntax { col: usize, msg: String },
    #[error("unknown identifier '{name}' at column {col}")]
    UnknownIdentifier { name: String, col: usize },
    #[error("exponent at column {col} must be a non-negative integer")]
    NonIntegerExponent { col: usize },
    #[error("division at column {col} must be by a nonzero constant")]
    BadDivision { col: usize },
    #[error("non-polynomial node '{node}' at {path} is not covered by a marker")]
    NonPolynomial { node: String, path: String },
    #[error("marker '{expr}' must depend on exactly one state variable")]
    MarkerVariables { expr: String },
    #[error("marker '{expr}' does not occur in component {component}")]
    MarkerNotFound { expr: String, component: usize },
    #[error("invalid system: {0}")]
    Invalid(String),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Sqrt => v.sqrt(),
            Func::Abs => v.abs(),
        }
    }
}

/// Expression AST. States and inputs are zero-based (`x1` is `State(0)`).
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    State(usize),
    Input(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::State(i) => x[*i],
            Expr::Input(i) => u[*i],
            Expr::Neg(a) => -a.eval(x, u),
            Expr::Add(a, b) => a.eval(x, u) + b.eval(x, u),
            Expr::Sub(a, b) => a.eval(x, u) - b.eval(x, u),
            Expr::Mul(a, b) => a.eval(x, u) * b.eval(x, u),
            Expr::Div(a, b) => a.eval(x, u) / b.eval(x, u),
            Expr::Pow(a, k) => a.eval(x, u).powi(*k as i32),
            Expr::Call(f, a) => f.apply(a.eval(x, u)),
        }
    }

    fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::State(_) | Expr::Input(_) => vec![],
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => vec![a],
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => vec![a, b],
        }
    }

    /// Sorted, deduplicated state indices referenced.
    pub fn states(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_vars(&mut out, &mut Vec::new());
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn inputs(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_vars(&mut Vec::new(), &mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_vars(&self, xs: &mut Vec<usize>, us: &mut Vec<usize>) {
        match self {
            Expr::State(i) => xs.push(*i),
            Expr::Input(i) => us.push(*i),
            _ => self.children().into_iter().for_each(|c| c.collect_vars(xs, us)),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.states().is_empty() && self.inputs().is_empty()
    }

    /// False when the expression contains `abs` or `sqrt`, whose composition
    /// may lose analyticity.
    pub fn is_analytic(&self) -> bool {
        match self {
            Expr::Call(Func::Abs | Func::Sqrt, _) => false,
            _ => self.children().into_iter().all(Expr::is_analytic),
        }
    }

    /// Expanded polynomial in the state variables; inputs are not allowed.
    pub fn to_polynomial(&self, nvars: usize) -> Result<Polynomial, DynamicsError> {
        self.to_poly_at(nvars, "root")
    }

    fn to_poly_at(&self, nvars: usize, path: &str) -> Result<Polynomial, DynamicsError> {
        let non_poly = |node: &Expr| DynamicsError::NonPolynomial { node: node.to_string(), path: path.to_string() };
        Ok(match self {
            Expr::Const(c) => Polynomial::constant(nvars, *c),
            Expr::State(i) if *i < nvars => Polynomial::var(nvars, *i),
            Expr::State(_) | Expr::Input(_) => return Err(non_poly(self)),
            Expr::Neg(a) => -&a.to_poly_at(nvars, &format!("{path}.neg"))?,
            Expr::Add(a, b) => {
                &a.to_poly_at(nvars, &format!("{path}.lhs"))? + &b.to_poly_at(nvars, &format!("{path}.rhs"))?
            }
            Expr::Sub(a, b) => {
                &a.to_poly_at(nvars, &format!("{path}.lhs"))? - &b.to_poly_at(nvars, &format!("{path}.rhs"))?
            }
            Expr::Mul(a, b) => {
                &a.to_poly_at(nvars, &format!("{path}.lhs"))? * &b.to_poly_at(nvars, &format!("{path}.rhs"))?
            }
            Expr::Div(a, b) => {
                if !b.is_constant() {
                    return Err(non_poly(self));
                }
                a.to_poly_at(nvars, &format!("{path}.lhs"))?.scale(1.0 / b.eval(&[], &[]))
            }
            Expr::Pow(a, k) => a.to_poly_at(nvars, &format!("{path}.base"))?.pow(*k),
            Expr::Call(f, a) => {
                if a.is_constant() {
                    Polynomial::constant(nvars, f.apply(a.eval(&[], &[])))
                } else {
                    return Err(DynamicsError::NonPolynomial {
                        node: self.to_string(),
                        path: format!("{path}.{}", f.name()),
                    });
                }
            }
        })
    }

    /// Replaces every subtree equal to `target` by `with`; returns the count.
    fn replace(&mut self, target: &Expr, with: &Expr) -> usize {
        if self == target {
            *self = with.clone();
            return 1;
        }
        match self {
            Expr::Const(_) | Expr::State(_) | Expr::Input(_) => 0,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.replace(target, with),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.replace(target, with) + b.replace(target, with)
            }
        }
    }
}

/// Fully parenthesised form; `parse` inverts it exactly.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::State(i) => write!(f, "x{}", i + 1),
            Expr::Input(i) => write!(f, "u{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, k) => write!(f, "({a}^{k})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, DynamicsError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| DynamicsError::Syntax { col, msg: format!("bad number '{text}'") })?;
            out.push((Tok::Num(v), col));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), col));
        } else if "+-*/^()".contains(c) {
            out.push((Tok::Op(c), col));
            i += 1;
        } else {
            return Err(DynamicsError::Syntax { col, msg: format!("unexpected character '{c}'") });
        }
    }
    out.push((Tok::End, chars.len() + 1));
    Ok(out)
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn col(&self) -> usize {
        self.toks[self.pos].1
    }

    fn next(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, c: char) -> Result<(), DynamicsError> {
        match self.next() {
            (Tok::Op(o), _) if o == c => Ok(()),
            (_, col) => Err(DynamicsError::Syntax { col, msg: format!("expected '{c}'") }),
        }
    }

    fn expr(&mut self) -> Result<Expr, DynamicsError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Op('+') => {
                    self.next();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Op('-') => {
                    self.next();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, DynamicsError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Op('*') => {
                    self.next();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Op('/') => {
                    let col = self.col();
                    self.next();
                    let rhs = self.unary()?;
                    if !rhs.is_constant() || rhs.eval(&[], &[]) == 0.0 {
                        return Err(DynamicsError::BadDivision { col });
                    }
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, DynamicsError> {
        if let Tok::Op('-') = self.peek() {
            self.next();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, DynamicsError> {
        let base = self.atom()?;
        if let Tok::Op('^') = self.peek() {
            self.next();
            let col = self.col();
            return match self.next() {
                (Tok::Num(v), _) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => {
                    Ok(Expr::Pow(Box::new(base), v as u32))
                }
                _ => Err(DynamicsError::NonIntegerExponent { col }),
            };
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, DynamicsError> {
        let (tok, col) = self.next();
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(f) = Func::from_name(&name) {
                    self.expect('(')?;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                let index = |prefix: char| -> Option<usize> {
                    let rest = name.strip_prefix(prefix)?;
                    let k: usize = rest.parse().ok()?;
                    (k >= 1 && !rest.starts_with('0')).then(|| k - 1)
                };
                if let Some(i) = index('x') {
                    Ok(Expr::State(i))
                } else if let Some(i) = index('u') {
                    Ok(Expr::Input(i))
                } else {
                    Err(DynamicsError::UnknownIdentifier { name, col })
                }
            }
            Tok::End => Err(DynamicsError::Syntax { col, msg: "unexpected end of input".into() }),
            Tok::Op(c) => Err(DynamicsError::Syntax { col, msg: format!("unexpected '{c}'") }),
        }
    }
}

/// Parses an expression over `x1..xn`, `u1..um`, numeric constants,
/// `+ - * / ^` and `sin cos exp sqrt abs`.
pub fn parse(src: &str) -> Result<Expr, DynamicsError> {
    let toks = tokenize(src)?;
    let mut p = Parser { toks, pos: 0 };
    if let Tok::End = p.peek() {
        return Err(DynamicsError::Syntax { col: 1, msg: "empty expression".into() });
    }
    let e = p.expr()?;
    match p.next() {
        (Tok::End, _) => Ok(e),
        (_, col) => Err(DynamicsError::Syntax { col, msg: "unexpected trailing input".into() }),
    }
}

/// Parses a polynomial expression in `x1..xn`.
pub fn parse_polynomial(src: &str, nvars: usize) -> Result<Polynomial, DynamicsError> {
    parse(src)?.to_polynomial(nvars)
}

/// A sub-expression of `f` to be replaced by its Chebyshev interpolant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Marker {
    /// One-based component index of `f`.
    pub component: usize,
    pub expr: String,
    pub k: usize,
    pub interval: [f64; 2],
    /// Bound on |expr| over the Bernstein ellipse; needed for a certified remainder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

/// JSON system description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub n: usize,
    pub m: usize,
    pub f: Vec<String>,
    pub g: Vec<Vec<String>>,
    /// Unknown disturbance of the true system, one entry per component
    /// (empty for none). Only used for simulation and data generation.
    #[serde(default)]
    pub d: Vec<String>,
    #[serde(default)]
    pub sigma_n: f64,
    #[serde(default)]
    pub markers: Vec<Marker>,
    /// Unsafe sets `{m_i ≤ 0}`, one polynomial each.
    #[serde(default, rename = "unsafe")]
    pub unsafe_regions: Vec<String>,
}

/// The true system `ẋ = f(x) + g(x)u + d(x)` with its unsafe sets `{m_i ≤ 0}`.
#[derive(Clone, Debug)]
pub struct ControlAffineSystem {
    pub n: usize,
    pub m: usize,
    pub f: Vec<Expr>,
    pub g: Vec<Vec<Polynomial>>,
    pub d: Vec<Option<Expr>>,
    pub sigma_n: f64,
    pub markers: Vec<Marker>,
    pub unsafe_regions: Vec<Polynomial>,
}

fn check_vars(e: &Expr, n: usize, m: usize, allow_inputs: bool, what: &str) -> Result<(), DynamicsError> {
    if let Some(i) = e.states().into_iter().find(|&i| i >= n) {
        return Err(DynamicsError::Invalid(format!("{what} references x{} but n = {n}", i + 1)));
    }
    let inputs = e.inputs();
    if !allow_inputs && !inputs.is_empty() {
        return Err(DynamicsError::Invalid(format!("{what} may not reference inputs")));
    }
    if let Some(i) = inputs.into_iter().find(|&i| i >= m) {
        return Err(DynamicsError::Invalid(format!("{what} references u{} but m = {m}", i + 1)));
    }
    Ok(())
}

impl ControlAffineSystem {
    pub fn from_spec(spec: &SystemSpec) -> Result<Self, DynamicsError> {
        let (n, m) = (spec.n, spec.m);
        if n == 0 || spec.f.len() != n {
            return Err(DynamicsError::Invalid(format!("f needs {n} components, got {}", spec.f.len())));
        }
        if spec.g.len() != n || spec.g.iter().any(|r| r.len() != m) {
            return Err(DynamicsError::Invalid(format!("g must be {n}x{m}")));
        }
        if !spec.d.is_empty() && spec.d.len() != n {
            return Err(DynamicsError::Invalid(format!("d needs {n} components or none")));
        }
        if !(spec.sigma_n >= 0.0) {
            return Err(DynamicsError::Invalid("sigma_n must be non-negative".into()));
        }
        let mut f = Vec::with_capacity(n);
        for (i, s) in spec.f.iter().enumerate() {
            let e = parse(s)?;
            check_vars(&e, n, m, false, &format!("f[{}]", i + 1))?;
            f.push(e);
        }
        let mut g = Vec::with_capacity(n);
        for row in &spec.g {
            g.push(row.iter().map(|s| parse_polynomial(s, n)).collect::<Result<Vec<_>, _>>()?);
        }
        let mut d = Vec::with_capacity(n);
        for (i, s) in spec.d.iter().enumerate() {
            let e = parse(s)?;
            check_vars(&e, n, m, false, &format!("d[{}]", i + 1))?;
            d.push(if e == Expr::Const(0.0) { None } else { Some(e) });
        }
        d.resize(n, None);
        for mk in &spec.markers {
            if mk.component == 0 || mk.component > n {
                return Err(DynamicsError::Invalid(format!("marker component {} out of range", mk.component)));
            }
            if parse(&mk.expr)?.states().len() != 1 {
                return Err(DynamicsError::MarkerVariables { expr: mk.expr.clone() });
            }
        }
        let unsafe_regions = spec
            .unsafe_regions
            .iter()
            .map(|s| parse_polynomial(s, n))
            .collect::<Result<Vec<_>, _>>()?;
        if unsafe_regions.iter().any(|p| p.degree() == 0) {
            return Err(DynamicsError::Invalid("unsafe region polynomials must be nonconstant".into()));
        }
        Ok(ControlAffineSystem { n, m, f, g, d, sigma_n: spec.sigma_n, markers: spec.markers.clone(), unsafe_regions })
    }

    pub fn from_json(text: &str) -> Result<Self, DynamicsError> {
        Self::from_spec(&serde_json::from_str(text)?)
    }

    /// `f(x) + g(x)u` without the unknown disturbance.
    pub fn nominal_rhs(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let gu: f64 = self.g[i].iter().zip(u).map(|(g, uj)| g.eval(x) * uj).sum();
                self.f[i].eval(x, u) + gu
            })
            .collect()
    }

    /// True right-hand side including `d(x)`.
    pub fn rhs(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut v = self.nominal_rhs(x, u);
        for (vi, d) in v.iter_mut().zip(&self.d) {
            if let Some(d) = d {
                *vi += d.eval(x, u);
            }
        }
        v
    }

    /// Closed-loop true right-hand side under a polynomial feedback.
    pub fn closed_loop(&self, x: &[f64], controller: &[Polynomial]) -> Vec<f64> {
        let u = eval_controller(controller, x, self.m);
        self.rhs(x, &u)
    }
}

pub fn eval_controller(controller: &[Polynomial], x: &[f64], m: usize) -> Vec<f64> {
    if controller.is_empty() {
        vec![0.0; m]
    } else {
        controller.iter().map(|p| p.eval(x)).collect()
    }
}

/// Replacement record for one marker.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarkerReport {
    pub component: usize,
    pub expr: String,
    pub variable: usize,
    pub interpolant: ChebyshevInterpolant,
    pub empirical_error: f64,
    /// Remainder bound; `None` when the target is not analytic or no
    /// `(c_m, ρ)` pair was supplied.
    pub certified_bound: Option<f64>,
    pub analytic: bool,
}

/// `P_k` and per-component bounds on the interpolation remainder `ξ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Polynomialized {
    pub p: Vec<Polynomial>,
    pub xi_bounds: Vec<f64>,
    pub markers: Vec<MarkerReport>,
}

/// Replaces every marked sub-expression by its Chebyshev interpolant and
/// expands each component of `f` to a polynomial.
pub fn polynomialize(sys: &ControlAffineSystem) -> Result<Polynomialized, DynamicsError> {
    let mut f = sys.f.clone();
    let mut xi_bounds = vec![0.0; sys.n];
    let mut reports = Vec::new();
    for mk in &sys.markers {
        let target = parse(&mk.expr)?;
        let var = target.states()[0];
        let x = vec![0.0; sys.n];
        let eval1 = |t: f64| {
            let mut x = x.clone();
            x[var] = t;
            target.eval(&x, &[])
        };
        let interp = fit_interpolant(eval1, mk.k, mk.interval[0], mk.interval[1])?;
        let poly = interp.to_polynomial_in(sys.n, var);
        let with = poly_to_expr(&poly);
        let c = mk.component - 1;
        if f[c].replace(&target, &with) == 0 {
            return Err(DynamicsError::MarkerNotFound { expr: mk.expr.clone(), component: mk.component });
        }
        let empirical = sup_error(eval1, &interp, 10_001);
        let analytic = target.is_analytic();
        let certified = match (analytic, mk.c_m, mk.rho) {
            (true, Some(cm), Some(rho)) => Some(remainder_bound(cm, rho, mk.k)?),
            _ => None,
        };
        if !analytic {
            log::warn!("marker '{}' is not analytic; reporting empirical error only", mk.expr);
        }
        xi_bounds[c] += certified.unwrap_or(empirical);
        reports.push(MarkerReport {
            component: mk.component,
            expr: mk.expr.clone(),
            variable: var,
            interpolant: interp,
            empirical_error: empirical,
            certified_bound: certified,
            analytic,
        });
    }
    let p = f
        .iter()
        .enumerate()
        .map(|(i, e)| {
            e.to_poly_at(sys.n, &format!("f[{}]", i + 1))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Polynomialized { p, xi_bounds, markers: reports })
}

/// Sum-of-monomials expression with the same value as `p`.
pub fn poly_to_expr(p: &Polynomial) -> Expr {
    let mut acc: Option<Expr> = None;
    for (m, c) in p.terms() {
        let mut term = Expr::Const(c);
        for (i, &e) in m.exponents().iter().enumerate() {
            if e > 0 {
                let v = if e == 1 { Expr::State(i) } else { Expr::Pow(Box::new(Expr::State(i)), e) };
                term = Expr::Mul(Box::new(term), Box::new(v));
            }
        }
        acc = Some(match acc {
            None => term,
            Some(a) => Expr::Add(Box::new(a), Box::new(term)),
        });
    }
    acc.unwrap_or(Expr::Const(0.0))
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<F>(f: F, x: &[f64], dt: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let k1 = f(x);
    let x2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k1[i]).collect();
    let k2 = f(&x2);
    let x3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k2[i]).collect();
    let k3 = f(&x3);
    let x4: Vec<f64> = (0..n).map(|i| x[i] + dt * k3[i]).collect();
    let k4 = f(&x4);
    (0..n).map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

pub const ESCAPE_NORM: f64 = 1e6;

/// Sampled trajectory with finite-difference derivatives and residuals
/// `d̂ = ẋ − f(x) − g(x)u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub xdot: Vec<Vec<f64>>,
    pub dhat: Vec<Vec<f64>>,
    pub truncated: bool,
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Builds derivatives and residuals from raw samples on a uniform grid.
    pub fn from_samples(
        sys: &ControlAffineSystem,
        t: Vec<f64>,
        x: Vec<Vec<f64>>,
        u: Vec<Vec<f64>>,
    ) -> Result<Self, DynamicsError> {
        if t.len() < 3 {
            return Err(DynamicsError::Invalid("need at least 3 samples for finite differences".into()));
        }
        let dt = t[1] - t[0];
        let xdot = finite_differences(&x, dt);
        let dhat = residuals(sys, &x, &u, &xdot);
        Ok(TrajectoryDataset { t, x, u, xdot, dhat, truncated: false })
    }

    /// Writes `t,x1..xn,u1..um`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DynamicsError> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.x.first().map_or(0, Vec::len);
        let m = self.u.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        wr.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![self.t[k].to_string()];
            row.extend(self.x[k].iter().map(f64::to_string));
            row.extend(self.u[k].iter().map(f64::to_string));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Writes the derived measurements `x1..xn,d1..dn`.
    pub fn write_measurements_csv<W: Write>(&self, w: W) -> Result<(), DynamicsError> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.x.first().map_or(0, Vec::len);
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.extend((1..=n).map(|i| format!("d{i}")));
        wr.write_record(&header)?;
        for k in 0..self.len() {
            let row: Vec<String> = self.x[k].iter().chain(&self.dhat[k]).map(f64::to_string).collect();
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a `t,x1..xn,u1..um` trajectory and derives `ẋ` and `d̂`.
    pub fn read_csv<R: Read>(sys: &ControlAffineSystem, r: R) -> Result<Self, DynamicsError> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let header = rd.headers()?.clone();
        let mut expected = vec!["t".to_string()];
        expected.extend((1..=sys.n).map(|i| format!("x{i}")));
        expected.extend((1..=sys.m).map(|i| format!("u{i}")));
        if header.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(DynamicsError::Invalid(format!("expected CSV header {}", expected.join(","))));
        }
        let (mut t, mut x, mut u) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rd.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| DynamicsError::Invalid(format!("bad number '{s}': {e}"))))
                .collect::<Result<_, _>>()?;
            t.push(vals[0]);
            x.push(vals[1..=sys.n].to_vec());
            u.push(vals[sys.n + 1..].to_vec());
        }
        Self::from_samples(sys, t, x, u)
    }

    pub fn read_csv_file(sys: &ControlAffineSystem, path: &Path) -> Result<Self, DynamicsError> {
        Self::read_csv(sys, std::fs::File::open(path)?)
    }
}

/// Central differences inside, second-order one-sided differences at the ends.
pub fn finite_differences(x: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
    let len = x.len();
    let n = x.first().map_or(0, Vec::len);
    (0..len)
        .map(|k| {
            (0..n)
                .map(|i| {
                    if len < 3 {
                        if len == 2 {
                            (x[1][i] - x[0][i]) / dt
                        } else {
                            0.0
                        }
                    } else if k == 0 {
                        (-3.0 * x[0][i] + 4.0 * x[1][i] - x[2][i]) / (2.0 * dt)
                    } else if k == len - 1 {
                        (3.0 * x[k][i] - 4.0 * x[k - 1][i] + x[k - 2][i]) / (2.0 * dt)
                    } else {
                        (x[k + 1][i] - x[k - 1][i]) / (2.0 * dt)
                    }
                })
                .collect()
        })
        .collect()
}

fn residuals(sys: &ControlAffineSystem, x: &[Vec<f64>], u: &[Vec<f64>], xdot: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .zip(u)
        .zip(xdot)
        .map(|((x, u), xd)| {
            let nominal = sys.nominal_rhs(x, u);
            xd.iter().zip(&nominal).map(|(a, b)| a - b).collect()
        })
        .collect()
}

/// Simulates the true system from `x0` with RK4 and returns `ceil(T/dt)`
/// samples with noisy finite-difference derivatives.
pub fn generate_measurements(
    sys: &ControlAffineSystem,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    controller: &[Polynomial],
    seed: u64,
) -> Result<TrajectoryDataset, DynamicsError> {
    if !(dt > 0.0) || !(horizon >= dt) {
        return Err(DynamicsError::Invalid(format!("need dt > 0 and T >= dt, got dt = {dt}, T = {horizon}")));
    }
    if x0.len() != sys.n {
        return Err(DynamicsError::Invalid(format!("x0 has {} entries, expected {}", x0.len(), sys.n)));
    }
    let steps = (horizon / dt - 1e-9).ceil() as usize;
    let mut t = Vec::with_capacity(steps);
    let mut xs = Vec::with_capacity(steps);
    let mut us = Vec::with_capacity(steps);
    let mut x = x0.to_vec();
    let mut truncated = false;
    for k in 0..steps {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= ESCAPE_NORM) {
            log::warn!("trajectory from {x0:?} escaped at t = {}; truncated", k as f64 * dt);
            truncated = true;
            break;
        }
        t.push(k as f64 * dt);
        us.push(eval_controller(controller, &x, sys.m));
        xs.push(x.clone());
        x = rk4_step(|y| sys.closed_loop(y, controller), &x, dt);
    }
    if t.len() < 3 {
        return Err(DynamicsError::Invalid("trajectory escaped before three samples".into()));
    }
    let mut xdot = finite_differences(&xs, dt);
    if sys.sigma_n > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sys.sigma_n).expect("finite sigma");
        for row in &mut xdot {
            for v in row.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
    }
    let dhat = residuals(sys, &xs, &us, &xdot);
    Ok(TrajectoryDataset { t, x: xs, u: us, xdot, dhat, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys1(f: &[&str]) -> ControlAffineSystem {
        let n = f.len();
        let g = (0..n)
            .map(|i| (0..n).map(|j| if i == j { "1".to_string() } else { "0".to_string() }).collect())
            .collect();
        ControlAffineSystem::from_spec(&SystemSpec {
            n,
            m: n,
            f: f.iter().map(|s| s.to_string()).collect(),
            g,
            d: vec![],
            sigma_n: 0.0,
            markers: vec![],
            unsafe_regions: vec![],
        })
        .unwrap()
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse("-x1 + x2").unwrap().eval(&[1.0, 0.0], &[]), -1.0);
        let e = parse("x1^2*x2 + 1 - sqrt(abs(exp(x1)*cos(x1)))").unwrap();
        assert_eq!(e.eval(&[0.0, 0.0], &[]), 0.0);
        match parse("x1 +") {
            Err(DynamicsError::Syntax { col, .. }) => assert_eq!(col, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("y + 1"), Err(DynamicsError::UnknownIdentifier { col: 1, .. })));
        assert!(matches!(parse("x1^1.5"), Err(DynamicsError::NonIntegerExponent { col: 4 })));
        assert!(matches!(parse("x1 / x2"), Err(DynamicsError::BadDivision { .. })));
        assert!(matches!(parse("x1 / (2 - 2)"), Err(DynamicsError::BadDivision { .. })));
        assert!(parse("x0").is_err());
    }

    #[test]
    fn precedence() {
        assert_eq!(parse("-x1^2").unwrap().eval(&[3.0], &[]), -9.0);
        assert_eq!(parse("2*3^2").unwrap().eval(&[], &[]), 18.0);
        assert_eq!(parse("8/4/2").unwrap().eval(&[], &[]), 1.0);
        assert_eq!(parse("1-2-3").unwrap().eval(&[], &[]), -4.0);
        assert_eq!(parse("2*-x1").unwrap().eval(&[3.0], &[]), -6.0);
        assert!((parse("1.5e-1*u2").unwrap().eval(&[], &[0.0, 2.0]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn polynomial_conversion() {
        let p = parse_polynomial("(x1+x2)^2 - x2/2", 2).unwrap();
        let x1 = Polynomial::var(2, 0);
        let x2 = Polynomial::var(2, 1);
        let expected = &(&(&x1 + &x2) * &(&x1 + &x2)) - &x2.scale(0.5);
        assert_eq!(p, expected);
        match parse_polynomial("x1 + sin(x2)", 2) {
            Err(DynamicsError::NonPolynomial { path, .. }) => assert_eq!(path, "root.rhs.sin"),
            other => panic!("{other:?}"),
        }
        let q = parse("-3*x1+x2").unwrap();
        assert_eq!(parse(&poly_to_expr(&q.to_polynomial(2).unwrap()).to_string()).unwrap().to_polynomial(2).unwrap(), q.to_polynomial(2).unwrap());
    }

    #[test]
    fn polynomial_system_is_left_alone() {
        let sys = sys1(&["-x1 + x2", "x1^2*x2 - x2"]);
        let out = polynomialize(&sys).unwrap();
        assert_eq!(out.xi_bounds, vec![0.0, 0.0]);
        assert_eq!(out.p[0], parse_polynomial("-x1 + x2", 2).unwrap());
        assert_eq!(out.p[1], parse_polynomial("x1^2*x2 - x2", 2).unwrap());
    }

    #[test]
    fn marker_replacement() {
        let mut spec = SystemSpec {
            n: 2,
            m: 2,
            f: vec!["-x1 + x2".into(), "x1^2*x2 + 1 - sqrt(abs(exp(x1)*cos(x1)))".into()],
            g: vec![vec!["1".into(), "0".into()], vec!["0".into(), "1".into()]],
            d: vec![],
            sigma_n: 0.0,
            markers: vec![Marker {
                component: 2,
                expr: "sqrt(abs(exp(x1)*cos(x1)))".into(),
                k: 4,
                interval: [-2.0, 2.0],
                c_m: None,
                rho: None,
            }],
            unsafe_regions: vec![],
        };
        let sys = ControlAffineSystem::from_spec(&spec).unwrap();
        let out = polynomialize(&sys).unwrap();
        assert!(out.p[1].degree() <= 4);
        assert!(!out.markers[0].analytic);
        assert!(out.markers[0].certified_bound.is_none());
        assert!(out.xi_bounds[1] > 0.0);
        assert_eq!(out.xi_bounds[1], out.markers[0].empirical_error);

        // sin on [-1, 1] with a valid ellipse bound
        spec.f[1] = "x2 + sin(x1)".into();
        spec.markers = vec![Marker {
            component: 2,
            expr: "sin(x1)".into(),
            k: 7,
            interval: [-1.0, 1.0],
            c_m: Some((0.75f64).cosh()),
            rho: Some(2.0),
        }];
        let out = polynomialize(&ControlAffineSystem::from_spec(&spec).unwrap()).unwrap();
        let r = &out.markers[0];
        assert!(r.empirical_error <= r.certified_bound.unwrap());
        assert_eq!(out.xi_bounds[1], r.certified_bound.unwrap());

        spec.markers[0].expr = "sin(x1*x2)".into();
        assert!(matches!(ControlAffineSystem::from_spec(&spec), Err(DynamicsError::MarkerVariables { .. })));
        spec.markers[0].expr = "cos(x1)".into();
        let sys = ControlAffineSystem::from_spec(&spec).unwrap();
        assert!(matches!(polynomialize(&sys), Err(DynamicsError::MarkerNotFound { .. })));
    }

    #[test]
    fn measurements_of_exact_model_have_small_residuals() {
        let sys = sys1(&["-x1"]);
        let data = generate_measurements(&sys, &[1.0], 5.0, 0.01, &[], 1).unwrap();
        assert_eq!(data.len(), 500);
        let worst = data.dhat.iter().map(|d| d[0].abs()).fold(0.0, f64::max);
        // one-sided end formulas carry the largest O(dt²) error
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn sample_count_and_determinism() {
        let mut sys = sys1(&["-x1 + x2", "-x2"]);
        sys.sigma_n = 0.01;
        let a = generate_measurements(&sys, &[-0.5, 0.2], 30.0, 0.1, &[], 42).unwrap();
        let b = generate_measurements(&sys, &[-0.5, 0.2], 30.0, 0.1, &[], 42).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a, b);
        let c = generate_measurements(&sys, &[-0.5, 0.2], 30.0, 0.1, &[], 43).unwrap();
        assert_ne!(a.xdot, c.xdot);
    }

    #[test]
    fn escape_truncates() {
        let sys = sys1(&["x1^3"]);
        let data = generate_measurements(&sys, &[2.0], 10.0, 0.01, &[], 0).unwrap();
        assert!(data.truncated);
        assert!(data.len() < 1000);
    }

    #[test]
    fn csv_round_trip() {
        let sys = sys1(&["-x1 + x2", "-x2"]);
        let data = generate_measurements(&sys, &[1.0, 1.0], 1.0, 0.1, &[], 0).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2,u1,u2\n"));
        let back = TrajectoryDataset::read_csv(&sys, buf.as_slice()).unwrap();
        assert_eq!(back.x, data.x);
        assert_eq!(back.dhat, data.dhat);
        let mut m = Vec::new();
        data.write_measurements_csv(&mut m).unwrap();
        assert!(String::from_utf8(m).unwrap().starts_with("x1,x2,d1,d2\n"));
    }

    #[test]
    fn spec_json() {
        let text = r#"{"n":2, "m":2, "f":["-x1+x2", "x1^2*x2+1-sqrt(abs(exp(x1)*cos(x1)))"],
            "g":[["1","0"],["0","1"]], "sigma_n":0.01,
            "markers":[{"component":2, "expr":"sqrt(abs(exp(x1)*cos(x1)))", "k":4, "interval":[-2,2]}],
            "unsafe":["(x1+4)^2+(x2-5)^2-4"]}"#;
        let sys = ControlAffineSystem::from_json(text).unwrap();
        assert_eq!(sys.unsafe_regions[0].eval(&[-4.0, 5.0]), -4.0);
        assert!(ControlAffineSystem::from_json(r#"{"n":1,"m":1,"f":["x1"],"g":[["1"]],"bogus":1}"#).is_err());
        assert!(ControlAffineSystem::from_json(r#"{"n":1,"m":1,"f":["x2"],"g":[["1"]]}"#).is_err());
    }
}
