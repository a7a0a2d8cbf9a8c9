//! Controller, Lyapunov and barrier synthesis on a learned polynomial system.
//!
//! Every SOS program built here is affine in its unknowns; the bilinear
//! structure of the joint problem is handled by alternation:
//!
//! * Loop 1 fixes `V` and `u` and grows the certified sublevel set `{V ≤ c}`.
//! * Loop 2 alternates between a controller step (fix the barrier `h`, search
//!   `u` and multipliers for a margin `ε`) and a barrier step (fix `u` and the
//!   multipliers, maximise the Gram trace of `B`).
//! * Loop 3 fixes `B` and `u` and searches a new `V` with the largest decrease
//!   margin on `{B ≥ 0}`.
//!
//! Positivity on a semialgebraic set is relaxed with SOS multipliers; the
//! unsafe sets are `{m_i ≤ 0}` and are excluded with `−B + n_i m_i ∈ Σ`.

use nalgebra::{DMatrix, DVector};
use nalgebra::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learn::{LearnedSystem, Region};
use crate::poly::{monomial_range, Monomial, Polynomial};
use crate::sosprog::{
    AffinePoly, ConstraintCheck, DecisionPoly, DecisionScalar, LinearForm, ScalarKind, Sense, SolveResult, SolveStatus,
    SolverSettings, SosError, SosProgram, VerificationReport,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error("{stage}: program is {status:?}")]
    Infeasible { stage: String, status: SolveStatus },
    #[error("linearisation is not stabilisable: uncontrollable mode at eigenvalue {eigenvalue}")]
    Unstabilizable { eigenvalue: String },
    #[error("{0} affected components exceed the envelope-vertex limit of 8")]
    TooManyVertices(usize),
    #[error("invalid synthesis configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisturbanceMode {
    /// Learned terms enter through their polynomial mean.
    None,
    /// Constraints are imposed at every vertex of the envelope box.
    Envelope,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub deg_u: u32,
    pub deg_v: u32,
    /// Degree of `V` searched in Loop 3.
    pub deg_v_loop3: u32,
    pub deg_b: u32,
    /// Minimum multiplier degree; raised automatically where needed.
    pub deg_mult: u32,
    /// Extended class-κ factor in `Ḃ ≥ −αB`.
    pub alpha: f64,
    /// Decrease margin: `V̇ ≤ −ζ‖x‖²` on the certified set.
    pub zeta: f64,
    pub disturbance_mode: DisturbanceMode,
    pub outer_max_iters: usize,
    pub loop1_max_iters: usize,
    pub loop2_max_iters: usize,
    pub tol_c: f64,
    pub tol_trace: f64,
    /// Initial sublevel guess for Loop 1.
    pub c0: f64,
    pub c_max: f64,
    pub u_coeff_bound: f64,
    pub b_coeff_bound: f64,
    /// Lower bound on `B(0)` keeping the equilibrium inside the region.
    pub b_origin_min: f64,
    /// Positive-definiteness margin for `V` in Loop 3.
    pub pd_margin: f64,
    pub loop3: bool,
    /// Relative objective back-off before the interior re-solve.
    pub backoff: f64,
    /// Box on which the learned model is trusted; the certified region is
    /// kept inside it.
    pub validity_box: Option<Region>,
    pub solver: SolverSettings,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            deg_u: 3,
            deg_v: 2,
            deg_v_loop3: 2,
            deg_b: 4,
            deg_mult: 2,
            alpha: 1.0,
            zeta: 1e-4,
            disturbance_mode: DisturbanceMode::None,
            outer_max_iters: 3,
            loop1_max_iters: 20,
            loop2_max_iters: 8,
            tol_c: 1e-3,
            tol_trace: 1e-3,
            c0: 1.0,
            c_max: 100.0,
            u_coeff_bound: 50.0,
            b_coeff_bound: 100.0,
            b_origin_min: 1e-3,
            pd_margin: 1e-4,
            loop3: true,
            backoff: 1e-3,
            validity_box: None,
            solver: SolverSettings::default(),
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        let bad = |m: &str| Err(SynthesisError::Config(m.to_string()));
        if self.deg_v % 2 != 0 || self.deg_v_loop3 % 2 != 0 || self.deg_b % 2 != 0 || self.deg_mult % 2 != 0 {
            return bad("deg_v, deg_v_loop3, deg_b and deg_mult must be even");
        }
        if self.deg_v < 2 || self.deg_b < 2 {
            return bad("deg_v and deg_b must be at least 2");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(0.0..0.5).contains(&self.backoff) {
            return bad("backoff must lie in [0, 0.5)");
        }
        if !(self.zeta >= 0.0) || !(self.pd_margin >= 0.0) {
            return bad("zeta and pd_margin must be non-negative");
        }
        if !(self.c0 > 0.0) || !(self.c_max >= self.c0) {
            return bad("need 0 < c0 <= c_max");
        }
        if let Some(b) = &self.validity_box {
            if !b.is_valid() {
                return bad("validity_box must have lo < hi in every coordinate");
            }
        }
        Ok(())
    }
}

/// Polynomial data the synthesis programs are built from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesisProblem {
    pub n: usize,
    pub m: usize,
    /// One drift per disturbance vertex (a single entry in nominal mode).
    pub vertices: Vec<Vec<Polynomial>>,
    pub g: Vec<Vec<Polynomial>>,
    /// Unsafe sets `{m_i ≤ 0}`.
    pub unsafe_regions: Vec<Polynomial>,
    /// Sets `{m ≤ 0}` the region must avoid to stay in the validity box.
    pub containment: Vec<Polynomial>,
}

impl SynthesisProblem {
    pub fn new(
        drift: Vec<Polynomial>,
        g: Vec<Vec<Polynomial>>,
        unsafe_regions: Vec<Polynomial>,
        validity_box: Option<&Region>,
    ) -> Self {
        let n = drift.len();
        let m = g.first().map_or(0, Vec::len);
        SynthesisProblem {
            n,
            m,
            vertices: vec![drift],
            g,
            unsafe_regions,
            containment: validity_box.map(|b| box_polynomials(b)).unwrap_or_default(),
        }
    }

    pub fn from_learned(
        sys: &LearnedSystem,
        mode: DisturbanceMode,
        unsafe_regions: Vec<Polynomial>,
        validity_box: Option<&Region>,
    ) -> Result<Self, SynthesisError> {
        let mut prob = Self::new(sys.drift(), sys.g.clone(), unsafe_regions, validity_box);
        if mode == DisturbanceMode::Envelope {
            let disturbances = envelope_vertices(sys)?;
            prob.vertices = disturbances
                .iter()
                .map(|d| sys.p_k.iter().zip(d).map(|(p, di)| p + di).collect())
                .collect();
        }
        Ok(prob)
    }

    fn closed_loop(&self, drift: &[Polynomial], u: &[Polynomial]) -> Vec<Polynomial> {
        (0..self.n)
            .map(|i| {
                let mut f = drift[i].clone();
                for (g, uj) in self.g[i].iter().zip(u) {
                    f = &f + &(g * uj);
                }
                f
            })
            .collect()
    }

    fn max_field_degree(&self, u_deg: u32) -> u32 {
        let drift = self.vertices.iter().flatten().map(Polynomial::degree).max().unwrap_or(0);
        let g = self.g.iter().flatten().map(Polynomial::degree).max().unwrap_or(0);
        drift.max(g + u_deg)
    }
}

/// `(x_j − a_j)(b_j − x_j)` for each axis: negative exactly outside the box.
pub fn box_polynomials(b: &Region) -> Vec<Polynomial> {
    let n = b.nvars();
    (0..n)
        .map(|j| {
            let x = Polynomial::var(n, j);
            &(&x - &Polynomial::constant(n, b.lo[j])) * &(&Polynomial::constant(n, b.hi[j]) - &x)
        })
        .collect()
}

/// All `2^q` choices of `{lo, hi}` over the `q` affected components, with
/// duplicates removed.
pub fn envelope_vertices(sys: &LearnedSystem) -> Result<Vec<Vec<Polynomial>>, SynthesisError> {
    let affected = sys.affected();
    if affected.len() > 8 {
        return Err(SynthesisError::TooManyVertices(affected.len()));
    }
    let mut out: Vec<Vec<Polynomial>> = Vec::new();
    for mask in 0..(1usize << affected.len()) {
        let mut d = vec![Polynomial::zero(sys.n); sys.n];
        for (bit, &c) in affected.iter().enumerate() {
            let env = sys.envelopes[c].as_ref().expect("affected component");
            d[c] = if mask >> bit & 1 == 1 { env.hi_poly.clone() } else { env.lo_poly.clone() };
        }
        if !out.iter().any(|o| o.iter().zip(&d).all(|(a, b)| a.approx_eq(b, 1e-12))) {
            out.push(d);
        }
    }
    Ok(out)
}

fn norm2(n: usize) -> Polynomial {
    Polynomial::sum_of_squares_of_vars(n, 1.0)
}

fn even_ceil(d: i64) -> u32 {
    let d = d.max(0) as u32;
    d + d % 2
}

/// Smallest even degree ≥ `min` with `d + other ≥ target`.
fn mult_degree(target: u32, other: u32, min: u32) -> u32 {
    min.max(even_ceil(target as i64 - other as i64))
}

/// Even degree `d ≤ min` with `d + deg(m) ≤ target`, for multipliers of
/// region polynomials whose leading form may be negative.
fn region_mult_degree(target: u32, m: &Polynomial, min: u32) -> u32 {
    let room = target.saturating_sub(m.degree());
    min.min(room - room % 2)
}

/// `Σ_b coeff_{b²}` over the Gram basis of degrees `min_half..=half`.
fn trace_form(expr: &AffinePoly, min_half: u32, half: u32) -> LinearForm {
    let mut f = LinearForm::default();
    for b in monomial_range(expr.nvars(), min_half, half) {
        f = f.add(&expr.coefficient(&b.product(&b)));
    }
    f
}

/// Gram-trace of a known polynomial in the same convention as [`trace_form`].
pub fn gram_trace(p: &Polynomial, min_half: u32, half: u32) -> f64 {
    crate::poly::canonical_trace(p, min_half, half)
}

/// `∇W · (drift + g u)` with `u` unknown.
fn lie_with_unknown_u(prob: &SynthesisProblem, w: &Polynomial, drift: &[Polynomial], u: &[DecisionPoly]) -> AffinePoly {
    let grad = w.gradient();
    let known: Polynomial = grad
        .iter()
        .zip(drift)
        .fold(Polynomial::zero(prob.n), |acc, (dw, f)| &acc + &(dw * f));
    let mut out = AffinePoly::from_poly(known);
    for i in 0..prob.n {
        for (j, uj) in u.iter().enumerate() {
            let coef = &grad[i] * &prob.g[i][j];
            if !coef.is_zero() {
                out = out.add(&uj.expr().mul_poly(&coef));
            }
        }
    }
    out
}

fn u_support(n: usize, deg: u32) -> Vec<Monomial> {
    monomial_range(n, 0, deg)
}

fn sos_mult(prog: &mut SosProgram, name: &str, deg: u32, min_half: u32) -> DecisionPoly {
    let basis = monomial_range(prog.nvars(), min_half.min(deg / 2), deg / 2);
    prog.sos_poly(name, basis)
}

fn require_usable(stage: &str, r: &SolveResult) -> Result<(), SynthesisError> {
    if r.is_usable() {
        Ok(())
    } else {
        Err(SynthesisError::Infeasible { stage: stage.to_string(), status: r.status })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub outer_iter: usize,
    #[serde(rename = "loop")]
    pub stage: String,
    pub objective: f64,
    pub status: SolveStatus,
}

/// Initial quadratic CLF and linear controller from the linearisation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InitialClf {
    pub v: Polynomial,
    pub u: Vec<Polynomial>,
    pub p: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub equilibrium_offset: f64,
}

/// Solves `M X + X Mᵀ = Q` by Kronecker vectorisation.
pub fn solve_lyapunov(m: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let op = id.kronecker(m) + m.kronecker(&id);
    let rhs = DVector::from_column_slice(q.as_slice());
    let x = op.lu().solve(&rhs)?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    Some((&x + x.transpose()) * 0.5)
}

fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    a.complex_eigenvalues().iter().all(|l| l.re < -1e-9)
}

/// Stabilising `u = Kx` (Bass's method when the drift is unstable) and
/// `V = xᵀPx` from `(A+BK)ᵀP + P(A+BK) = −I`.
pub fn initial_clf(prob: &SynthesisProblem) -> Result<InitialClf, SynthesisError> {
    let (n, m) = (prob.n, prob.m);
    let drift = &prob.vertices[0];
    let a = DMatrix::from_fn(n, n, |i, j| drift[i].coeff(&Monomial::var(n, j)));
    let b = DMatrix::from_fn(n, m, |i, j| prob.g[i][j].constant_term());
    let f0 = DVector::from_fn(n, |i, _| drift[i].constant_term());
    let offset = f0.amax();
    if offset > 1e-6 {
        log::warn!("origin is not an equilibrium of the drift (|f(0)| = {offset:.3e}); adding a constant input offset");
    }
    let k = if is_hurwitz(&a) {
        DMatrix::zeros(m, n)
    } else {
        // PBH test on the closed right half-plane
        for lambda in a.complex_eigenvalues().iter().filter(|l| l.re >= -1e-9) {
            let mut pbh = DMatrix::<Complex<f64>>::zeros(n, n + m);
            for i in 0..n {
                for j in 0..n {
                    pbh[(i, j)] = Complex::new(a[(i, j)], 0.0) - if i == j { *lambda } else { Complex::new(0.0, 0.0) };
                }
                for j in 0..m {
                    pbh[(i, n + j)] = Complex::new(b[(i, j)], 0.0);
                }
            }
            let sv = pbh.svd(false, false).singular_values;
            let rank = sv.iter().filter(|s| **s > 1e-9 * sv.max().max(1.0)).count();
            if rank < n {
                return Err(SynthesisError::Unstabilizable { eigenvalue: format!("{lambda}") });
            }
        }
        let beta = a.norm() + 1.0;
        let shifted = &a + DMatrix::identity(n, n) * beta;
        let z = solve_lyapunov(&shifted, &(&b * b.transpose() * 2.0))
            .ok_or_else(|| SynthesisError::Unstabilizable { eigenvalue: "singular Bass equation".into() })?;
        let z_inv = z.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| SynthesisError::Unstabilizable {
            eigenvalue: "controllability Gramian is singular (uncontrollable stable mode)".into(),
        })?;
        -(b.transpose() * z_inv)
    };
    let acl = &a + &b * &k;
    if !is_hurwitz(&acl) {
        return Err(SynthesisError::Unstabilizable { eigenvalue: "closed loop not Hurwitz".into() });
    }
    let p = solve_lyapunov(&acl.transpose(), &(-DMatrix::<f64>::identity(n, n)))
        .ok_or_else(|| SynthesisError::Config("Lyapunov equation is singular".into()))?;
    let mut v = Polynomial::zero(n);
    for i in 0..n {
        for j in 0..n {
            v = &v + &(&Polynomial::var(n, i) * &Polynomial::var(n, j)).scale(p[(i, j)]);
        }
    }
    // least-squares input cancelling the drift offset at the origin
    let u_off = if offset > 0.0 {
        b.clone().svd(true, true).solve(&(-&f0), 1e-12).unwrap_or_else(|_| DVector::zeros(m))
    } else {
        DVector::zeros(m)
    };
    let u = (0..m)
        .map(|j| {
            let mut uj = Polynomial::constant(n, u_off[j]);
            for i in 0..n {
                uj = &uj + &Polynomial::var(n, i).scale(k[(j, i)]);
            }
            uj.prune(0.0)
        })
        .collect();
    Ok(InitialClf {
        v: v.prune(0.0),
        u,
        p: (0..n).map(|i| (0..n).map(|j| p[(i, j)]).collect()).collect(),
        k: (0..m).map(|i| (0..n).map(|j| k[(i, j)]).collect()).collect(),
        equilibrium_offset: offset,
    })
}

/// Avoidance constraints `W + n_i m_i ∈ Σ` for every unsafe and containment
/// region, where `W` is affine in the unknowns and of degree `target`.
fn add_region_constraints(
    prog: &mut SosProgram,
    prob: &SynthesisProblem,
    w: &AffinePoly,
    target: u32,
    deg_mult: u32,
    tag: &str,
) -> Result<Vec<DecisionPoly>, SynthesisError> {
    let mut mults = Vec::new();
    for (i, m) in prob.unsafe_regions.iter().chain(&prob.containment).enumerate() {
        let d = region_mult_degree(target, m, deg_mult);
        let n_i = sos_mult(prog, &format!("{tag}_n{i}"), d, 0);
        let expr = w.add(&n_i.expr().mul_poly(m));
        prog.add_sos_constraint(&format!("{tag}_region{i}"), expr)?;
        mults.push(n_i);
    }
    Ok(mults)
}

/// Outcome of Loop 1.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Loop1Result {
    pub c: f64,
    pub multipliers: Vec<Polynomial>,
    pub c_history: Vec<f64>,
    pub history: Vec<HistoryRow>,
}

fn vdot_known(prob: &SynthesisProblem, v: &Polynomial, u: &[Polynomial]) -> Vec<Polynomial> {
    prob.vertices
        .iter()
        .map(|drift| v.lie_derivative(&prob.closed_loop(drift, u)).expect("field dimension"))
        .collect()
}

fn loop1_lstep(
    prob: &SynthesisProblem,
    v: &Polynomial,
    vdots: &[Polynomial],
    c: f64,
    cfg: &SynthesisConfig,
) -> Result<(Vec<Polynomial>, SolveResult), SynthesisError> {
    let (prog, ls) = build_lstep(prob, v, vdots, c, cfg)?;
    let r = prog.solve_with_backoff(&cfg.solver, cfg.backoff)?;
    let mults = ls.iter().map(|l| prog.poly_value(l, &r.values)).collect();
    Ok((mults, r))
}

fn build_lstep(
    prob: &SynthesisProblem,
    v: &Polynomial,
    vdots: &[Polynomial],
    c: f64,
    cfg: &SynthesisConfig,
) -> Result<(SosProgram, Vec<DecisionPoly>), SynthesisError> {
    let n = prob.n;
    let mut prog = SosProgram::new(n);
    let t = prog.scalar("t", ScalarKind::Free);
    prog.add_linear_bounds(t.form(), Some(cfg.zeta), Some(1.0));
    let slack = &Polynomial::constant(n, c) - v;
    let mut ls = Vec::new();
    for (k, vd) in vdots.iter().enumerate() {
        let dl = mult_degree(vd.degree() + 1, v.degree(), cfg.deg_mult);
        let l = sos_mult(&mut prog, &format!("L{k}"), dl, 1);
        let expr = AffinePoly::from_poly(-vd)
            .sub(&l.expr().mul_poly(&slack))
            .sub(&t.times(&norm2(n)));
        prog.add_sos_constraint_with_min_degree(&format!("lyap{k}"), expr, 1)?;
        ls.push(l);
    }
    add_region_constraints(&mut prog, prob, &AffinePoly::from_poly(v - &Polynomial::constant(n, c)), v.degree(), cfg.deg_mult, "l1")?;
    prog.set_objective(Sense::Maximize, t.form());
    Ok((prog, ls))
}

fn loop1_cstep(
    prob: &SynthesisProblem,
    v: &Polynomial,
    vdots: &[Polynomial],
    ls: &[Polynomial],
    cfg: &SynthesisConfig,
) -> Result<SolveResult, SynthesisError> {
    let n = prob.n;
    let mut prog = SosProgram::new(n);
    let c = prog.scalar("c", ScalarKind::NonNegative);
    prog.add_linear_bounds(c.form(), None, Some(cfg.c_max));
    for (k, (vd, l)) in vdots.iter().zip(ls).enumerate() {
        // −V̇ − L(c − V) − ζ‖x‖²
        let known = &(&(-vd) + &(l * v)) - &norm2(n).scale(cfg.zeta);
        let expr = AffinePoly::from_poly(known).sub(&c.times(l));
        prog.add_sos_constraint_with_min_degree(&format!("lyap{k}"), expr, 1)?;
    }
    let w = AffinePoly::from_poly(v.clone()).sub(&c.times(&Polynomial::constant(n, 1.0)));
    add_region_constraints(&mut prog, prob, &w, v.degree(), cfg.deg_mult, "l1")?;
    prog.set_objective(Sense::Maximize, c.form());
    Ok(prog.solve_with_backoff(&cfg.solver, cfg.backoff)?)
}

/// Loop 1: largest `c` with `V̇ ≤ −ζ‖x‖²` on `{V ≤ c}` and `{V ≤ c}` clear of
/// every unsafe and containment region, by alternating multiplier search
/// (fixed `c`) and `c` maximisation (fixed multiplier).
pub fn loop1_max_sublevel(
    prob: &SynthesisProblem,
    v: &Polynomial,
    u: &[Polynomial],
    c0: f64,
    cfg: &SynthesisConfig,
) -> Result<Loop1Result, SynthesisError> {
    let vdots = vdot_known(prob, v, u);
    let mut c = c0.min(cfg.c_max);
    let mut history = Vec::new();
    let mut found = None;
    for _ in 0..=20 {
        let (ls, r) = loop1_lstep(prob, v, &vdots, c, cfg)?;
        history.push(HistoryRow { outer_iter: 0, stage: "loop1_L".into(), objective: c, status: r.status });
        if r.is_usable() {
            found = Some(ls);
            break;
        }
        c *= 0.5;
    }
    let Some(mut ls) = found else {
        return Err(SynthesisError::Infeasible { stage: "loop1".into(), status: SolveStatus::Infeasible });
    };
    let mut c_history = vec![c];
    for _ in 0..cfg.loop1_max_iters {
        let r = loop1_cstep(prob, v, &vdots, &ls, cfg)?;
        history.push(HistoryRow { outer_iter: 0, stage: "loop1_c".into(), objective: r.objective, status: r.status });
        if !r.is_usable() || r.objective < c {
            break;
        }
        let improved = r.objective - c;
        c = r.objective;
        c_history.push(c);
        if improved < cfg.tol_c * c.max(1.0) || c >= cfg.c_max * (1.0 - 1e-9) {
            break;
        }
        let (next, r) = loop1_lstep(prob, v, &vdots, c, cfg)?;
        history.push(HistoryRow { outer_iter: 0, stage: "loop1_L".into(), objective: c, status: r.status });
        if !r.is_usable() {
            break;
        }
        ls = next;
    }
    Ok(Loop1Result { c, multipliers: ls, c_history, history })
}

/// Controller step: fixed `V` and barrier `h`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControllerStep {
    pub u: Vec<Polynomial>,
    /// `s1` per vertex (decrease condition).
    pub s1: Vec<Polynomial>,
    /// `s2` per vertex (barrier condition).
    pub s2: Vec<Polynomial>,
    pub epsilon: f64,
    pub status: SolveStatus,
}

/// `max ε` over `u, s1, s2`: `−V̇ − s1 h − ζ‖x‖² ∈ Σ` and
/// `ḣ + (α − s2) h − ε ∈ Σ` at every vertex, `ε ≥ 0`.
pub fn controller_step(
    prob: &SynthesisProblem,
    v: &Polynomial,
    h: &Polynomial,
    cfg: &SynthesisConfig,
) -> Result<ControllerStep, SynthesisError> {
    let (prog, h_) = build_controller(prob, v, h, cfg)?;
    let r = prog.solve_with_backoff(&cfg.solver, cfg.backoff)?;
    require_usable("controller", &r)?;
    Ok(ControllerStep {
        u: h_.u.iter().map(|p| prog.poly_value(p, &r.values).prune(1e-12)).collect(),
        s1: h_.s1.iter().map(|p| prog.poly_value(p, &r.values)).collect(),
        s2: h_.s2.iter().map(|p| prog.poly_value(p, &r.values)).collect(),
        epsilon: r.values[h_.eps.var.0],
        status: r.status,
    })
}

struct ControllerHandles {
    u: Vec<DecisionPoly>,
    s1: Vec<DecisionPoly>,
    s2: Vec<DecisionPoly>,
    eps: DecisionScalar,
}

fn build_controller(
    prob: &SynthesisProblem,
    v: &Polynomial,
    h: &Polynomial,
    cfg: &SynthesisConfig,
) -> Result<(SosProgram, ControllerHandles), SynthesisError> {
    let n = prob.n;
    let mut prog = SosProgram::new(n);
    let u: Vec<DecisionPoly> =
        (0..prob.m).map(|j| prog.free_poly(&format!("u{}", j + 1), u_support(n, cfg.deg_u))).collect();
    for uj in &u {
        prog.bound_coefficients(uj, cfg.u_coeff_bound);
    }
    let eps = prog.scalar("eps", ScalarKind::NonNegative);
    prog.add_linear_bounds(eps.form(), None, Some(cfg.alpha * h.constant_term().abs().max(1.0)));
    let fdeg = prob.max_field_degree(cfg.deg_u);
    let (mut s1s, mut s2s) = (Vec::new(), Vec::new());
    for (k, drift) in prob.vertices.iter().enumerate() {
        let vdot = lie_with_unknown_u(prob, v, drift, &u);
        let d1 = mult_degree(v.degree() + fdeg, h.degree(), cfg.deg_mult);
        let s1 = sos_mult(&mut prog, &format!("s1_{k}"), d1, 1);
        let e1 = vdot.scale(-1.0).sub(&s1.expr().mul_poly(h)).add_poly(&norm2(n).scale(-cfg.zeta));
        prog.add_sos_constraint_with_min_degree(&format!("decrease{k}"), e1, 1)?;

        let hdot = lie_with_unknown_u(prob, h, drift, &u);
        let d2 = mult_degree(h.degree() + fdeg, h.degree(), cfg.deg_mult);
        let s2 = sos_mult(&mut prog, &format!("s2_{k}"), d2, 0);
        let e2 = hdot
            .add_poly(&h.scale(cfg.alpha))
            .sub(&s2.expr().mul_poly(h))
            .sub(&eps.times(&Polynomial::constant(n, 1.0)));
        prog.add_sos_constraint(&format!("barrier{k}"), e2)?;
        s1s.push(s1);
        s2s.push(s2);
    }
    prog.set_objective(Sense::Maximize, eps.form());
    Ok((prog, ControllerHandles { u, s1: s1s, s2: s2s, eps }))
}

/// Theorem-1 step with `B = c − V`.
pub fn theorem1_controller(
    prob: &SynthesisProblem,
    v: &Polynomial,
    c: f64,
    cfg: &SynthesisConfig,
) -> Result<ControllerStep, SynthesisError> {
    let h = &Polynomial::constant(prob.n, c) - v;
    controller_step(prob, v, &h, cfg)
}

/// Barrier step result.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BarrierStep {
    pub b: Polynomial,
    pub region_multipliers: Vec<Polynomial>,
    pub trace: f64,
    pub stalled: bool,
    pub status: SolveStatus,
}

/// `max trace(Q_B)` over `B` with `u, s1, s2` fixed, subject to the decrease
/// and barrier conditions and `−B + n_i m_i ∈ Σ` for every region.
pub fn expand_barrier(
    prob: &SynthesisProblem,
    v: &Polynomial,
    ctrl: &ControllerStep,
    incoming: &Polynomial,
    cfg: &SynthesisConfig,
) -> Result<BarrierStep, SynthesisError> {
    let half = cfg.deg_b / 2;
    let (prog, b, mults) = build_barrier(prob, v, ctrl, cfg)?;
    let r = prog.solve_with_backoff(&cfg.solver, cfg.backoff)?;
    if !r.is_usable() {
        log::info!("barrier step stalled: {:?}", r.status);
        return Ok(BarrierStep {
            b: incoming.clone(),
            region_multipliers: Vec::new(),
            trace: gram_trace(incoming, 0, half),
            stalled: true,
            status: r.status,
        });
    }
    let bp = prog.poly_value(&b, &r.values);
    Ok(BarrierStep {
        trace: gram_trace(&bp, 0, half),
        b: bp,
        region_multipliers: mults.iter().map(|p| prog.poly_value(p, &r.values)).collect(),
        stalled: false,
        status: r.status,
    })
}

fn build_barrier(
    prob: &SynthesisProblem,
    v: &Polynomial,
    ctrl: &ControllerStep,
    cfg: &SynthesisConfig,
) -> Result<(SosProgram, DecisionPoly, Vec<DecisionPoly>), SynthesisError> {
    let n = prob.n;
    let half = cfg.deg_b / 2;
    let mut prog = SosProgram::new(n);
    let b = prog.free_poly("B", monomial_range(n, 0, cfg.deg_b));
    prog.bound_coefficients(&b, cfg.b_coeff_bound);
    prog.add_linear_bounds(b.expr().coefficient(&Monomial::one(n)), Some(cfg.b_origin_min), None);
    for (k, drift) in prob.vertices.iter().enumerate() {
        let field = prob.closed_loop(drift, &ctrl.u);
        let vdot = v.lie_derivative(&field).expect("field dimension");
        let known = &(-&vdot) - &norm2(n).scale(cfg.zeta);
        let e1 = AffinePoly::from_poly(known).sub(&b.expr().mul_poly(&ctrl.s1[k]));
        prog.add_sos_constraint_with_min_degree(&format!("decrease{k}"), e1, 1)?;
        let alpha_minus_s2 = &Polynomial::constant(n, cfg.alpha) - &ctrl.s2[k];
        let e2 = b.expr().lie_derivative(&field).add(&b.expr().mul_poly(&alpha_minus_s2));
        prog.add_sos_constraint(&format!("barrier{k}"), e2)?;
    }
    let mults = add_region_constraints(&mut prog, prob, &b.expr().scale(-1.0), cfg.deg_b, cfg.deg_mult, "ex")?;
    prog.set_objective(Sense::Maximize, trace_form(b.expr(), 0, half));
    Ok((prog, b, mults))
}

/// Outcome of Loop 2.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Loop2Result {
    pub u: Vec<Polynomial>,
    pub b: Polynomial,
    pub s1: Vec<Polynomial>,
    pub s2: Vec<Polynomial>,
    pub region_multipliers: Vec<Polynomial>,
    pub epsilon: f64,
    pub trace_history: Vec<f64>,
    pub history: Vec<HistoryRow>,
}

/// Loop 2: alternate controller and barrier steps from `B0` until the trace
/// gain drops below `tol_trace` (relative).
pub fn loop2_alternate(
    prob: &SynthesisProblem,
    v: &Polynomial,
    b0: &Polynomial,
    cfg: &SynthesisConfig,
) -> Result<Loop2Result, SynthesisError> {
    let half = cfg.deg_b / 2;
    let mut history = Vec::new();
    let mut h = b0.clone();
    let mut ctrl = controller_step(prob, v, &h, cfg)?;
    history.push(HistoryRow { outer_iter: 0, stage: "loop2_u".into(), objective: ctrl.epsilon, status: ctrl.status });
    let mut trace = gram_trace(&h, 0, half);
    let mut trace_history = vec![trace];
    let mut mults = Vec::new();
    for _ in 0..cfg.loop2_max_iters {
        let step = expand_barrier(prob, v, &ctrl, &h, cfg)?;
        history.push(HistoryRow { outer_iter: 0, stage: "loop2_B".into(), objective: step.trace, status: step.status });
        if step.stalled || step.trace < trace {
            break;
        }
        let gain = step.trace - trace;
        let candidate = step.b.clone();
        // the next controller step must succeed before the new barrier is accepted
        let next = match controller_step(prob, v, &candidate, cfg) {
            Ok(c) => c,
            Err(SynthesisError::Infeasible { status, .. }) => {
                history.push(HistoryRow { outer_iter: 0, stage: "loop2_u".into(), objective: f64::NAN, status });
                break;
            }
            Err(e) => return Err(e),
        };
        history.push(HistoryRow { outer_iter: 0, stage: "loop2_u".into(), objective: next.epsilon, status: next.status });
        h = candidate;
        ctrl = next;
        mults = step.region_multipliers;
        trace = step.trace;
        trace_history.push(trace);
        if gain < cfg.tol_trace * trace.abs().max(1.0) {
            break;
        }
    }
    if mults.is_empty() && !(prob.unsafe_regions.is_empty() && prob.containment.is_empty()) {
        mults = region_multipliers_for(prob, &h, cfg)?;
    }
    Ok(Loop2Result {
        u: ctrl.u,
        b: h,
        s1: ctrl.s1,
        s2: ctrl.s2,
        region_multipliers: mults,
        epsilon: ctrl.epsilon,
        trace_history,
        history,
    })
}

/// Multipliers certifying `−B + n_i m_i ∈ Σ` for a fixed `B`.
fn region_multipliers_for(prob: &SynthesisProblem, b: &Polynomial, cfg: &SynthesisConfig) -> Result<Vec<Polynomial>, SynthesisError> {
    let mut prog = SosProgram::new(prob.n);
    let mults = add_region_constraints(&mut prog, prob, &AffinePoly::from_poly(-b), b.degree().max(2), cfg.deg_mult, "ex")?;
    let r = prog.solve_with_backoff(&cfg.solver, cfg.backoff)?;
    require_usable("region multipliers", &r)?;
    Ok(mults.iter().map(|p| prog.poly_value(p, &r.values)).collect())
}

/// Outcome of Loop 3.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Loop3Result {
    pub v: Polynomial,
    pub l_v1: Polynomial,
    /// Decrease multipliers per vertex.
    pub l_v2: Vec<Polynomial>,
    pub epsilon_v: f64,
    pub stalled: bool,
    pub status: SolveStatus,
}

/// Loop 3 with the trace of `V`'s Gram pinned to `tau`.
pub fn loop3_with_normalization(
    prob: &SynthesisProblem,
    b: &Polynomial,
    u: &[Polynomial],
    v_prev: &Polynomial,
    tau: f64,
    cfg: &SynthesisConfig,
) -> Result<Loop3Result, SynthesisError> {
    let (prog, h) = build_loop3(prob, b, u, tau, cfg)?;
    let r = prog.solve_with_backoff(&cfg.solver, cfg.backoff)?;
    if !r.is_usable() {
        log::info!("loop 3 stalled: {:?}", r.status);
        return Ok(Loop3Result {
            v: v_prev.clone(),
            l_v1: Polynomial::zero(prob.n),
            l_v2: Vec::new(),
            epsilon_v: f64::NAN,
            stalled: true,
            status: r.status,
        });
    }
    Ok(Loop3Result {
        v: prog.poly_value(&h.v, &r.values),
        l_v1: prog.poly_value(&h.l1, &r.values),
        l_v2: h.l2.iter().map(|p| prog.poly_value(p, &r.values)).collect(),
        epsilon_v: r.values[h.eps.var.0],
        stalled: false,
        status: r.status,
    })
}

struct Loop3Handles {
    v: DecisionPoly,
    l1: DecisionPoly,
    l2: Vec<DecisionPoly>,
    eps: DecisionScalar,
}

fn build_loop3(
    prob: &SynthesisProblem,
    b: &Polynomial,
    u: &[Polynomial],
    tau: f64,
    cfg: &SynthesisConfig,
) -> Result<(SosProgram, Loop3Handles), SynthesisError> {
    let n = prob.n;
    let dv = cfg.deg_v_loop3.max(2);
    let mut prog = SosProgram::new(n);
    let v = prog.free_poly("V", monomial_range(n, 2, dv));
    let eps = prog.scalar("eps_v", ScalarKind::Free);
    prog.add_linear_bounds(eps.form(), Some(cfg.zeta), None);
    prog.add_linear_equality(trace_form(v.expr(), 1, dv / 2), tau);
    prog.add_sos_constraint_with_min_degree("pd", v.expr().add_poly(&norm2(n).scale(-cfg.pd_margin)), 1)?;
    let d1 = mult_degree(dv, b.degree(), 0);
    let l1 = sos_mult(&mut prog, "L_V1", d1, 1);
    prog.add_sos_constraint_with_min_degree("nonneg", v.expr().sub(&l1.expr().mul_poly(b)), 1)?;
    let mut l2s = Vec::new();
    for (k, drift) in prob.vertices.iter().enumerate() {
        let field = prob.closed_loop(drift, u);
        let fdeg = field.iter().map(Polynomial::degree).max().unwrap_or(0);
        let d2 = mult_degree(dv + fdeg, b.degree(), cfg.deg_mult);
        let l2 = sos_mult(&mut prog, &format!("L_V2_{k}"), d2, 1);
        let e = v
            .expr()
            .lie_derivative(&field)
            .scale(-1.0)
            .sub(&l2.expr().mul_poly(b))
            .sub(&eps.times(&norm2(n)));
        prog.add_sos_constraint_with_min_degree(&format!("decrease{k}"), e, 1)?;
        l2s.push(l2);
    }
    prog.set_objective(Sense::Maximize, eps.form());
    Ok((prog, Loop3Handles { v, l1, l2: l2s, eps }))
}

/// Loop 3: new `V` with the largest decrease margin on `{B ≥ 0}`, with the
/// Gram trace of the previous `V` kept.
pub fn loop3_optimal_v(
    prob: &SynthesisProblem,
    b: &Polynomial,
    u: &[Polynomial],
    v_prev: &Polynomial,
    cfg: &SynthesisConfig,
) -> Result<Loop3Result, SynthesisError> {
    let dv = cfg.deg_v_loop3.max(2);
    let tau = gram_trace(v_prev, 1, dv / 2);
    loop3_with_normalization(prob, b, u, v_prev, tau, cfg)
}

/// Size of one SDP the pipeline will solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedSdp {
    pub stage: String,
    pub variables: usize,
    pub rows: usize,
    pub equalities: usize,
    pub psd_blocks: Vec<usize>,
}

fn planned(stage: &str, prog: &SosProgram) -> Result<PlannedSdp, SynthesisError> {
    let inst = prog.compile()?;
    Ok(PlannedSdp {
        stage: stage.to_string(),
        variables: inst.num_vars,
        rows: inst.num_rows(),
        equalities: inst.num_equalities(),
        psd_blocks: inst.psd_block_sizes(),
    })
}

/// Compiles (without solving) one program of each kind at the initial
/// CLF, for reporting sizes. Multipliers that are normally solved for are
/// replaced by placeholders of the same degree.
pub fn plan(prob: &SynthesisProblem, cfg: &SynthesisConfig) -> Result<Vec<PlannedSdp>, SynthesisError> {
    cfg.validate()?;
    let n = prob.n;
    let init = initial_clf(prob)?;
    let vdots = vdot_known(prob, &init.v, &init.u);
    let mut out = Vec::new();
    let (prog, _) = build_lstep(prob, &init.v, &vdots, cfg.c0, cfg)?;
    out.push(planned("loop1", &prog)?);
    let h = &Polynomial::constant(n, cfg.c0) - &init.v;
    let (prog, _) = build_controller(prob, &init.v, &h, cfg)?;
    out.push(planned("loop2_controller", &prog)?);
    let fdeg = prob.max_field_degree(cfg.deg_u);
    let placeholder = |d: u32| norm2(n).pow(d / 2);
    let ctrl = ControllerStep {
        u: init.u.clone(),
        s1: vec![placeholder(mult_degree(init.v.degree() + fdeg, 2, cfg.deg_mult)); prob.vertices.len()],
        s2: vec![placeholder(mult_degree(2 + fdeg, 2, cfg.deg_mult)); prob.vertices.len()],
        epsilon: 0.0,
        status: SolveStatus::Optimal,
    };
    let (prog, _, _) = build_barrier(prob, &init.v, &ctrl, cfg)?;
    out.push(planned("loop2_barrier", &prog)?);
    if cfg.loop3 {
        let b = &Polynomial::constant(n, cfg.c0) - &norm2(n).pow(cfg.deg_b / 2);
        let u = vec![Polynomial::var(n, 0).pow(cfg.deg_u); prob.m];
        let (prog, _) = build_loop3(prob, &b, &u, 1.0, cfg)?;
        out.push(planned("loop3", &prog)?);
    }
    Ok(out)
}

/// Multipliers stored with a certificate.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Multipliers {
    pub s1: Vec<Polynomial>,
    pub s2: Vec<Polynomial>,
    /// One per unsafe region followed by one per containment polynomial.
    pub regions: Vec<Polynomial>,
    pub loop1: Vec<Polynomial>,
    pub l_v1: Option<Polynomial>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum CertificateStatus {
    Verified,
    Unverified { failures: Vec<String> },
    Partial { stage: String, error: String },
}

/// Synthesised `(V, B, u)` with everything needed to re-check it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Certificate {
    pub nvars: usize,
    pub v: Polynomial,
    pub b: Polynomial,
    pub u: Vec<Polynomial>,
    pub c: f64,
    pub epsilon: f64,
    pub trace_q: f64,
    pub multipliers: Multipliers,
    pub v0: Polynomial,
    pub c0: f64,
    pub u0: Vec<Polynomial>,
    /// Barrier after the first pass of Loop 2, before any Loop 3 update.
    pub b_initial: Polynomial,
    /// Accepted Loop-1 levels, one list per outer iteration.
    pub c_history: Vec<Vec<f64>>,
    /// Accepted Loop-2 traces, one list per outer iteration.
    pub trace_history: Vec<Vec<f64>>,
    pub history: Vec<HistoryRow>,
    pub problem: SynthesisProblem,
    pub config: SynthesisConfig,
    pub verification: VerificationReport,
    pub status: CertificateStatus,
    pub version: String,
}

impl Certificate {
    pub fn is_verified(&self) -> bool {
        self.status == CertificateStatus::Verified
    }

    pub fn region_contains(&self, x: &[f64]) -> bool {
        self.b.eval(x) >= 0.0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

fn fixed_sos_check(name: &str, p: &Polynomial, min_half: u32, solver: &SolverSettings) -> ConstraintCheck {
    let mut prog = SosProgram::new(p.nvars());
    let _ = prog.add_sos_constraint_with_min_degree(name, AffinePoly::from_poly(p.clone()), min_half);
    match prog.solve(solver) {
        Ok(r) if r.is_usable() => {
            let report = r.verification.expect("verified");
            let c = &report.checks[0];
            ConstraintCheck { name: name.to_string(), min_eigenvalue: c.min_eigenvalue, residual: c.residual, passed: true }
        }
        Ok(r) => ConstraintCheck {
            name: name.to_string(),
            min_eigenvalue: r
                .verification
                .as_ref()
                .and_then(|v| v.checks.first().map(|c| c.min_eigenvalue))
                .unwrap_or(f64::NAN),
            residual: f64::NAN,
            passed: false,
        },
        Err(_) => ConstraintCheck { name: name.to_string(), min_eigenvalue: f64::NAN, residual: f64::NAN, passed: false },
    }
}

/// Rebuilds every certificate condition from the stored polynomials and
/// re-solves each as a fixed SOS feasibility problem.
pub fn check_certificate(cert: &Certificate) -> VerificationReport {
    let prob = &cert.problem;
    let cfg = &cert.config;
    let n = prob.n;
    let s = &cfg.solver;
    let mut checks = Vec::new();
    let mm = &cert.multipliers;
    let pd = &cert.v - &norm2(n).scale(cfg.pd_margin.min(1e-6));
    checks.push(fixed_sos_check("V positive", &pd, 1, s));
    for (k, drift) in prob.vertices.iter().enumerate() {
        let field = prob.closed_loop(drift, &cert.u);
        let vdot = cert.v.lie_derivative(&field).expect("field");
        let (Some(s1), Some(s2)) = (mm.s1.get(k), mm.s2.get(k)) else {
            checks.push(ConstraintCheck { name: format!("multipliers{k}"), min_eigenvalue: f64::NAN, residual: f64::NAN, passed: false });
            continue;
        };
        checks.push(fixed_sos_check(&format!("s1[{k}]"), s1, 0, s));
        checks.push(fixed_sos_check(&format!("s2[{k}]"), s2, 0, s));
        let e1 = &(&(-&vdot) - &(s1 * &cert.b)) - &norm2(n).scale(cfg.zeta);
        checks.push(fixed_sos_check(&format!("decrease[{k}]"), &e1, 1, s));
        let bdot = cert.b.lie_derivative(&field).expect("field");
        let e2 = &bdot + &(&(&Polynomial::constant(n, cfg.alpha) - s2) * &cert.b);
        checks.push(fixed_sos_check(&format!("barrier[{k}]"), &e2, 0, s));
    }
    let regions: Vec<&Polynomial> = prob.unsafe_regions.iter().chain(&prob.containment).collect();
    for (i, m) in regions.iter().enumerate() {
        match mm.regions.get(i) {
            Some(n_i) => {
                checks.push(fixed_sos_check(&format!("n[{i}]"), n_i, 0, s));
                let e = &(-&cert.b) + &(n_i * m);
                checks.push(fixed_sos_check(&format!("exclusion[{i}]"), &e, 0, s));
            }
            None => checks.push(ConstraintCheck {
                name: format!("exclusion[{i}]"),
                min_eigenvalue: f64::NAN,
                residual: f64::NAN,
                passed: false,
            }),
        }
    }
    let origin = vec![0.0; n];
    checks.push(ConstraintCheck {
        name: "B(0) > 0".into(),
        min_eigenvalue: cert.b.eval(&origin),
        residual: 0.0,
        passed: cert.b.eval(&origin) > 0.0,
    });
    let passed = checks.iter().all(|c| c.passed);
    VerificationReport { checks, passed }
}

struct Incumbent {
    v: Polynomial,
    l2: Loop2Result,
    trace: f64,
    c: f64,
    loop1_mults: Vec<Polynomial>,
    l_v1: Option<Polynomial>,
}

/// Full workflow: initial CLF, then Loop 1 → Loop 2 → Loop 3 repeated until
/// the barrier trace stops improving.
pub fn run_pipeline(prob: &SynthesisProblem, cfg: &SynthesisConfig) -> Result<Certificate, SynthesisError> {
    cfg.validate()?;
    let init = initial_clf(prob)?;
    let half = cfg.deg_b / 2;
    let mut history = Vec::new();
    let mut c_history = Vec::new();
    let mut trace_history = Vec::new();
    let mut v = init.v.clone();
    let mut u = init.u.clone();
    let mut best: Option<Incumbent> = None;
    let mut c0 = f64::NAN;
    let mut b_initial = None;
    let mut failure: Option<(String, SynthesisError)> = None;

    for outer in 0..cfg.outer_max_iters.max(1) {
        let l1 = match loop1_max_sublevel(prob, &v, &u, cfg.c0, cfg) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(("loop1".into(), e));
                break;
            }
        };
        history.extend(l1.history.iter().cloned().map(|mut r| {
            r.outer_iter = outer;
            r
        }));
        c_history.push(l1.c_history.clone());
        if outer == 0 {
            c0 = l1.c;
        }
        // Later passes restart from the incumbent barrier: Loop 3 certified
        // the new V on it, so the first controller step stays feasible.
        let mut c = l1.c;
        let mut l2 = None;
        if let Some(b) = best.as_ref().map(|inc| inc.l2.b.clone()) {
            match loop2_alternate(prob, &v, &b, cfg) {
                Ok(r) => l2 = Some(r),
                Err(e) => log::info!("warm start from the incumbent barrier failed: {e}"),
            }
        }
        // shrink c until the Theorem-1 step is feasible
        for _ in 0..=10 {
            if l2.is_some() {
                break;
            }
            let b0 = &Polynomial::constant(prob.n, c) - &v;
            match loop2_alternate(prob, &v, &b0, cfg) {
                Ok(r) => {
                    l2 = Some(r);
                    break;
                }
                Err(SynthesisError::Infeasible { status, .. }) => {
                    history.push(HistoryRow { outer_iter: outer, stage: "theorem1".into(), objective: c, status });
                    c *= 0.9;
                }
                Err(e) => return Err(e),
            }
        }
        let Some(l2) = l2 else {
            failure = Some((
                "loop2".into(),
                SynthesisError::Infeasible { stage: "theorem1".into(), status: SolveStatus::Infeasible },
            ));
            break;
        };
        history.extend(l2.history.iter().cloned().map(|mut r| {
            r.outer_iter = outer;
            r
        }));
        trace_history.push(l2.trace_history.clone());
        let trace = gram_trace(&l2.b, 0, half);
        if b_initial.is_none() {
            b_initial = Some(l2.b.clone());
        }
        let prev_trace = best.as_ref().map(|b| b.trace);
        if let Some(pt) = prev_trace {
            if trace < pt {
                log::info!("outer iteration {outer} lowered the trace ({trace} < {pt}); keeping the incumbent");
                break;
            }
        }
        u = l2.u.clone();
        let mut inc = Incumbent { v: v.clone(), trace, c, loop1_mults: l1.multipliers.clone(), l2, l_v1: None };
        if cfg.loop3 {
            let l3 = match loop3_optimal_v(prob, &inc.l2.b, &inc.l2.u, &v, cfg) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("loop 3 failed, keeping V: {e}");
                    best = Some(inc);
                    break;
                }
            };
            history.push(HistoryRow {
                outer_iter: outer,
                stage: "loop3".into(),
                objective: l3.epsilon_v,
                status: l3.status,
            });
            if !l3.stalled {
                v = l3.v.clone();
                inc.v = l3.v;
                inc.l2.s1 = l3.l_v2;
                inc.l_v1 = Some(l3.l_v1);
            }
        }
        let improved = prev_trace.map(|pt| (trace - pt) / pt.abs().max(1e-12));
        best = Some(inc);
        if let Some(rel) = improved {
            if rel < cfg.tol_trace {
                break;
            }
        }
    }

    let Some(inc) = best else {
        let (stage, err) = failure.unwrap_or(("pipeline".into(), SynthesisError::Config("no iterations".into())));
        log::warn!("synthesis failed in {stage}: {err}");
        return Ok(Certificate {
            nvars: prob.n,
            v: init.v.clone(),
            b: Polynomial::zero(prob.n),
            u: init.u.clone(),
            c: f64::NAN,
            epsilon: f64::NAN,
            trace_q: f64::NAN,
            multipliers: Multipliers::default(),
            v0: init.v,
            c0,
            u0: init.u,
            b_initial: Polynomial::zero(prob.n),
            c_history,
            trace_history,
            history,
            problem: prob.clone(),
            config: cfg.clone(),
            verification: VerificationReport { checks: vec![], passed: false },
            status: CertificateStatus::Partial { stage, error: err.to_string() },
            version: env!("CARGO_PKG_VERSION").to_string(),
        });
    };
    let mut cert = Certificate {
        nvars: prob.n,
        v: inc.v,
        b: inc.l2.b.clone(),
        u: inc.l2.u.clone(),
        c: inc.c,
        epsilon: inc.l2.epsilon,
        trace_q: inc.trace,
        multipliers: Multipliers {
            s1: inc.l2.s1,
            s2: inc.l2.s2,
            regions: inc.l2.region_multipliers,
            loop1: inc.loop1_mults,
            l_v1: inc.l_v1,
        },
        v0: init.v,
        c0,
        u0: init.u,
        b_initial: b_initial.expect("set with the incumbent"),
        c_history,
        trace_history,
        history,
        problem: prob.clone(),
        config: cfg.clone(),
        verification: VerificationReport { checks: vec![], passed: false },
        status: CertificateStatus::Verified,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let report = check_certificate(&cert);
    cert.status = if report.passed {
        CertificateStatus::Verified
    } else {
        CertificateStatus::Unverified { failures: report.failures().iter().map(|s| s.to_string()).collect() }
    };
    cert.verification = report;
    Ok(cert)
}
