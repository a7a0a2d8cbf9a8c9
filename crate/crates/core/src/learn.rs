//! Gaussian-process regression of the lumped residual `d(x) + ξ(x)` with a
//! squared-exponential kernel, least-squares polynomial mean models, and
//! polynomial confidence envelopes.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ControlAffineSystem, Polynomialized, TrajectoryDataset};
use crate::poly::{monomial_basis, Polynomial};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("kernel matrix is ill-conditioned (estimate {estimate:.3e}); increase jitter or sigma_n")]
    IllConditioned { estimate: f64 },
    #[error("training data: {0}")]
    BadData(String),
    #[error("invalid kernel: {0}")]
    BadKernel(String),
    #[error("least-squares fit is rank deficient ({rank} of {cols}); lower the degree or refine the grid")]
    RankDeficient { rank: usize, cols: usize },
    #[error("grid of {0} points exceeds the 1e6 limit")]
    GridTooLarge(usize),
    #[error("invalid probability parameters: {0}")]
    BadProbability(String),
}

/// `k(x, x') = σ_f² exp(−½ Σ_j (x_j − x'_j)² / l_j²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub sigma_f: f64,
    pub lengthscales: Vec<f64>,
    pub sigma_n: f64,
}

impl KernelConfig {
    pub fn isotropic(sigma_f: f64, l: f64, sigma_n: f64, nvars: usize) -> Self {
        KernelConfig { sigma_f, lengthscales: vec![l; nvars], sigma_n }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.sigma_f > 0.0) || !self.sigma_f.is_finite() {
            return Err(LearnError::BadKernel(format!("sigma_f = {}", self.sigma_f)));
        }
        if self.lengthscales.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(LearnError::BadKernel("lengthscales must be positive".into()));
        }
        if !(self.sigma_n >= 0.0) {
            return Err(LearnError::BadKernel(format!("sigma_n = {}", self.sigma_n)));
        }
        Ok(())
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.sigma_f * self.sigma_f * (-0.5 * r2).exp()
    }

    /// Gram matrix without noise or jitter.
    pub fn matrix(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let n = xs.len();
        DMatrix::from_fn(n, n, |i, j| self.eval(&xs[i], &xs[j]))
    }
}

/// GP posterior conditioned on `(X, y)`.
#[derive(Clone, Debug)]
pub struct GpModel {
    pub kernel: KernelConfig,
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<f64>,
    pub jitter: f64,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    log_marginal: f64,
}

pub const DEFAULT_JITTER: f64 = 1e-10;
const MAX_CONDITION: f64 = 1e12;

impl GpModel {
    /// The zero-mean prior.
    pub fn prior(kernel: KernelConfig) -> Self {
        GpModel {
            kernel,
            train_x: Vec::new(),
            train_y: Vec::new(),
            jitter: 0.0,
            chol: None,
            alpha: DVector::zeros(0),
            log_marginal: 0.0,
        }
    }

    pub fn nvars(&self) -> usize {
        self.kernel.lengthscales.len()
    }

    pub fn num_points(&self) -> usize {
        self.train_y.len()
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal
    }

    /// Posterior mean and standard deviation.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let prior_var = self.kernel.sigma_f * self.kernel.sigma_f;
        let Some(chol) = &self.chol else {
            return (0.0, prior_var.sqrt());
        };
        let ks = DVector::from_iterator(self.train_x.len(), self.train_x.iter().map(|xi| self.kernel.eval(x, xi)));
        let mean = ks.dot(&self.alpha);
        let v = chol.l().solve_lower_triangular(&ks).expect("triangular factor");
        let var = (prior_var - v.norm_squared()).max(0.0);
        (mean, var.sqrt())
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        if self.chol.is_none() {
            return 0.0;
        }
        self.train_x.iter().zip(self.alpha.iter()).map(|(xi, a)| a * self.kernel.eval(x, xi)).sum()
    }
}

/// Conditions a GP on data with the default jitter.
pub fn gp_fit(x: &[Vec<f64>], y: &[f64], kernel: &KernelConfig) -> Result<GpModel, LearnError> {
    gp_fit_with_jitter(x, y, kernel, DEFAULT_JITTER)
}

pub fn gp_fit_with_jitter(x: &[Vec<f64>], y: &[f64], kernel: &KernelConfig, jitter: f64) -> Result<GpModel, LearnError> {
    kernel.validate()?;
    if x.is_empty() || x.len() != y.len() {
        return Err(LearnError::BadData(format!("{} inputs vs {} targets", x.len(), y.len())));
    }
    let nv = kernel.lengthscales.len();
    if x.iter().any(|r| r.len() != nv) {
        return Err(LearnError::BadData(format!("inputs must have {nv} columns")));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(LearnError::BadData("non-finite value".into()));
    }
    let n = x.len();
    let mut k = kernel.matrix(x);
    let noise = kernel.sigma_n * kernel.sigma_n + jitter;
    for i in 0..n {
        k[(i, i)] += noise;
    }
    let chol = Cholesky::new(k).ok_or(LearnError::IllConditioned { estimate: f64::INFINITY })?;
    let diag = chol.l_dirty().diagonal();
    let (dmin, dmax) = diag.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), v| (a.min(*v), b.max(*v)));
    let estimate = (dmax / dmin).powi(2);
    if !(estimate <= MAX_CONDITION) {
        return Err(LearnError::IllConditioned { estimate });
    }
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let log_det: f64 = diag.iter().map(|v| v.ln()).sum();
    let log_marginal =
        -0.5 * yv.dot(&alpha) - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(GpModel {
        kernel: kernel.clone(),
        train_x: x.to_vec(),
        train_y: y.to_vec(),
        jitter,
        chol: Some(chol),
        alpha,
        log_marginal,
    })
}

/// Picks `(σ_f, l)` from the grids by log-marginal likelihood.
pub fn grid_search(
    x: &[Vec<f64>],
    y: &[f64],
    sigma_f_grid: &[f64],
    l_grid: &[f64],
    sigma_n: f64,
) -> Result<GpModel, LearnError> {
    let nv = x.first().map_or(0, Vec::len);
    let mut best: Option<GpModel> = None;
    for &sf in sigma_f_grid {
        for &l in l_grid {
            let Ok(model) = gp_fit(x, y, &KernelConfig::isotropic(sf, l, sigma_n, nv)) else {
                continue;
            };
            if best.as_ref().is_none_or(|b| model.log_marginal > b.log_marginal) {
                best = Some(model);
            }
        }
    }
    best.ok_or_else(|| LearnError::BadKernel("no grid point produced a well-conditioned model".into()))
}

/// Axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Region { lo, hi }
    }

    pub fn cube(nvars: usize, half_width: f64) -> Self {
        Region { lo: vec![-half_width; nvars], hi: vec![half_width; nvars] }
    }

    pub fn nvars(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn is_valid(&self) -> bool {
        self.lo.len() == self.hi.len()
            && !self.lo.is_empty()
            && self.lo.iter().zip(&self.hi).all(|(a, b)| a < b && a.is_finite() && b.is_finite())
    }

    /// Bounding box of the points, widened by `pad` times its extent (at
    /// least `min_half_width` around the centre in each direction).
    pub fn bounding(points: &[Vec<f64>], pad: f64, min_half_width: f64) -> Self {
        let n = points.first().map_or(0, Vec::len);
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for p in points {
            for i in 0..n {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        for i in 0..n {
            let w = (hi[i] - lo[i]) * pad;
            let c = 0.5 * (lo[i] + hi[i]);
            let half = (0.5 * (hi[i] - lo[i]) + w).max(min_half_width);
            lo[i] = c - half;
            hi[i] = c + half;
        }
        Region { lo, hi }
    }

    /// Uniform tensor grid with `per_axis` points per axis, endpoints included.
    pub fn grid(&self, per_axis: usize) -> Result<Vec<Vec<f64>>, LearnError> {
        let n = self.nvars();
        let total = (per_axis as f64).powi(n as i32);
        if total > 1e6 {
            return Err(LearnError::GridTooLarge(total as usize));
        }
        let per_axis = per_axis.max(2);
        let axes: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..per_axis)
                    .map(|k| self.lo[i] + (self.hi[i] - self.lo[i]) * k as f64 / (per_axis - 1) as f64)
                    .collect()
            })
            .collect();
        let mut out = vec![Vec::with_capacity(n)];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        Ok(out)
    }
}

/// Least-squares polynomial with its RMSE on the fit points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolyFit {
    pub poly: Polynomial,
    pub rmse: f64,
    pub max_residual: f64,
}

/// Least-squares fit of `values` at `points` over all monomials of degree ≤ `degree`.
pub fn least_squares_poly(points: &[Vec<f64>], values: &[f64], degree: u32) -> Result<PolyFit, LearnError> {
    let nv = points.first().map_or(0, Vec::len);
    if nv == 0 || points.len() != values.len() {
        return Err(LearnError::BadData("empty or mismatched fit data".into()));
    }
    let basis = monomial_basis(nv, degree);
    let cols = basis.len();
    if points.len() < cols {
        return Err(LearnError::RankDeficient { rank: points.len(), cols });
    }
    // centre and scale each axis so the columns are comparable
    let region = Region::bounding(points, 0.0, 1e-12);
    let centre: Vec<f64> = (0..nv).map(|i| 0.5 * (region.lo[i] + region.hi[i])).collect();
    let half: Vec<f64> = (0..nv).map(|i| 0.5 * (region.hi[i] - region.lo[i])).collect();
    let scaled = |p: &[f64]| -> Vec<f64> { (0..nv).map(|i| (p[i] - centre[i]) / half[i]).collect() };
    let a = DMatrix::from_fn(points.len(), cols, |r, c| basis[c].eval(&scaled(&points[r])));
    let b = DVector::from_column_slice(values);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * points.len().max(cols) as f64;
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    if rank < cols {
        return Err(LearnError::RankDeficient { rank, cols });
    }
    let coef = svd.solve(&b, tol).map_err(|e| LearnError::BadData(e.to_string()))?;
    let resid = &a * &coef - &b;
    let rmse = (resid.norm_squared() / points.len() as f64).sqrt();
    let max_residual = resid.amax();
    // undo the scaling: x̂_i = (x_i − c_i)/h_i
    let xhat: Vec<Polynomial> = (0..nv)
        .map(|i| &Polynomial::var(nv, i).scale(1.0 / half[i]) - &Polynomial::constant(nv, centre[i] / half[i]))
        .collect();
    let mut poly = Polynomial::zero(nv);
    for (m, c) in basis.iter().zip(coef.iter()) {
        if *c == 0.0 {
            continue;
        }
        let mut term = Polynomial::constant(nv, *c);
        for (i, &e) in m.exponents().iter().enumerate() {
            if e > 0 {
                term = &term * &xhat[i].pow(e);
            }
        }
        poly = &poly + &term;
    }
    Ok(PolyFit { poly: poly.prune(1e-14 * coef.amax().max(1e-300)), rmse, max_residual })
}

/// Least-squares polynomial of the posterior mean over a uniform grid.
pub fn fit_polynomial_mean(model: &GpModel, degree: u32, region: &Region, grid_n: usize) -> Result<PolyFit, LearnError> {
    let grid = region.grid(grid_n)?;
    let values: Vec<f64> = grid.par_iter().map(|x| model.mean(x)).collect();
    if values.iter().all(|v| *v == 0.0) {
        return Ok(PolyFit { poly: Polynomial::zero(region.nvars()), rmse: 0.0, max_residual: 0.0 });
    }
    least_squares_poly(&grid, &values, degree)
}

/// Polynomial mean with lower/upper envelopes of the `k_δ` band.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConfidenceEnvelope {
    pub mean_poly: Polynomial,
    pub lo_poly: Polynomial,
    pub hi_poly: Polynomial,
    pub k_delta: f64,
    pub delta: f64,
    pub n_measurements: usize,
    pub fit_region: Region,
    pub grid_n: usize,
    pub mean_fit_rmse: f64,
    /// The envelope is guaranteed to contain the band only at grid points.
    pub sound_on_grid_only: bool,
}

impl ConfidenceEnvelope {
    /// Zero-width envelope around a known polynomial.
    pub fn exact(mean: Polynomial, region: Region) -> Self {
        ConfidenceEnvelope {
            lo_poly: mean.clone(),
            hi_poly: mean.clone(),
            mean_poly: mean,
            k_delta: 0.0,
            delta: 0.5,
            n_measurements: 0,
            fit_region: region,
            grid_n: 0,
            mean_fit_rmse: 0.0,
            sound_on_grid_only: false,
        }
    }

    pub fn width_at(&self, x: &[f64]) -> f64 {
        self.hi_poly.eval(x) - self.lo_poly.eval(x)
    }
}

/// Fits `mean ∓ k_δσ` by least squares and shifts each fit outward by its
/// largest residual so the band and the mean polynomial are enclosed at
/// every grid point.
pub fn build_envelope(
    model: &GpModel,
    k_delta: f64,
    degree: u32,
    region: &Region,
    grid_n: usize,
) -> Result<ConfidenceEnvelope, LearnError> {
    build_envelope_with_mean_points(model, k_delta, degree, region, grid_n, None)
}

/// As [`build_envelope`], but the mean polynomial is fitted to the GP mean
/// at `mean_points` (typically the training inputs) instead of the grid.
/// The band is still fitted on the grid and shifted to enclose the mean.
pub fn build_envelope_with_mean_points(
    model: &GpModel,
    k_delta: f64,
    degree: u32,
    region: &Region,
    grid_n: usize,
    mean_points: Option<&[Vec<f64>]>,
) -> Result<ConfidenceEnvelope, LearnError> {
    if !(k_delta >= 0.0) {
        return Err(LearnError::BadProbability(format!("k_delta = {k_delta}")));
    }
    let grid = region.grid(grid_n)?;
    let post: Vec<(f64, f64)> = grid.par_iter().map(|x| model.posterior(x)).collect();
    let means: Vec<f64> = post.iter().map(|p| p.0).collect();
    let lo_t: Vec<f64> = post.iter().map(|(m, s)| m - k_delta * s).collect();
    let hi_t: Vec<f64> = post.iter().map(|(m, s)| m + k_delta * s).collect();
    let mean_fit = match mean_points {
        Some(pts) => {
            let targets: Vec<f64> = pts.par_iter().map(|x| model.mean(x)).collect();
            least_squares_poly(pts, &targets, degree)?
        }
        None => least_squares_poly(&grid, &means, degree)?,
    };
    let lo_fit = least_squares_poly(&grid, &lo_t, degree)?;
    let hi_fit = least_squares_poly(&grid, &hi_t, degree)?;
    let mut shift_lo = lo_fit.max_residual;
    let mut shift_hi = hi_fit.max_residual;
    for (x, _) in grid.iter().zip(&means) {
        let mp = mean_fit.poly.eval(x);
        shift_lo = shift_lo.max(lo_fit.poly.eval(x) - mp);
        shift_hi = shift_hi.max(mp - hi_fit.poly.eval(x));
    }
    let nv = region.nvars();
    let lo_poly = &lo_fit.poly - &Polynomial::constant(nv, shift_lo);
    let hi_poly = &hi_fit.poly + &Polynomial::constant(nv, shift_hi);
    Ok(ConfidenceEnvelope {
        mean_poly: mean_fit.poly,
        lo_poly,
        hi_poly,
        k_delta,
        delta: 0.05,
        n_measurements: model.num_points(),
        fit_region: region.clone(),
        grid_n,
        mean_fit_rmse: mean_fit.rmse,
        sound_on_grid_only: true,
    })
}

/// `(1 − δ)^m`.
pub fn probability_bound(delta: f64, m: usize) -> Result<f64, LearnError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(LearnError::BadProbability(format!("delta = {delta} must lie in (0, 1)")));
    }
    if m == 0 {
        return Err(LearnError::BadProbability("need at least one measurement".into()));
    }
    Ok((1.0 - delta).powi(m as i32))
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    let n = pred.len().max(1) as f64;
    (pred.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt()
}

/// Settings for residual learning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnConfig {
    pub sigma_f: f64,
    pub lengthscale: f64,
    /// One-based components with an unknown term; empty means every
    /// component carrying a marker or a disturbance.
    #[serde(default)]
    pub components: Vec<usize>,
    #[serde(default = "default_k_delta")]
    pub k_delta: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_mean_degree")]
    pub mean_degree: u32,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    /// Region for the polynomial fits; defaults to the padded data box.
    #[serde(default)]
    pub fit_region: Option<Region>,
    /// Keep every `stride`-th sample (thinning clustered trajectory data).
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub grid_search: bool,
    #[serde(default)]
    pub mean_fit: MeanFit,
}

/// Where the polynomial mean is fitted to the GP mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanFit {
    /// Uniform grid over the fit region.
    #[default]
    Grid,
    /// The training inputs.
    Data,
}

fn default_k_delta() -> f64 {
    2.0
}
fn default_delta() -> f64 {
    0.05
}
fn default_mean_degree() -> u32 {
    4
}
fn default_grid_n() -> usize {
    25
}
fn default_stride() -> usize {
    1
}

/// Learned surrogate `ẋ = P_k(x) + g(x)u + d`, with `d` described by
/// per-component envelopes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LearnedSystem {
    pub n: usize,
    pub m: usize,
    pub p_k: Vec<Polynomial>,
    pub g: Vec<Vec<Polynomial>>,
    pub envelopes: Vec<Option<ConfidenceEnvelope>>,
    pub xi_bounds: Vec<f64>,
}

impl LearnedSystem {
    /// Surrogate with no learned term.
    pub fn from_polynomials(p_k: Vec<Polynomial>, g: Vec<Vec<Polynomial>>) -> Self {
        let n = p_k.len();
        let m = g.first().map_or(0, Vec::len);
        LearnedSystem { n, m, p_k, g, envelopes: vec![None; n], xi_bounds: vec![0.0; n] }
    }

    /// `P_k + m(x)`: the drift with learned terms replaced by their mean.
    pub fn drift(&self) -> Vec<Polynomial> {
        self.p_k
            .iter()
            .zip(&self.envelopes)
            .map(|(p, e)| match e {
                Some(e) => p + &e.mean_poly,
                None => p.clone(),
            })
            .collect()
    }

    /// Components with a learned envelope.
    pub fn affected(&self) -> Vec<usize> {
        (0..self.n).filter(|i| self.envelopes[*i].is_some()).collect()
    }

    /// Drift plus `g·u` for a polynomial controller.
    pub fn closed_loop(&self, drift: &[Polynomial], u: &[Polynomial]) -> Vec<Polynomial> {
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
}

/// Learning diagnostics per component.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComponentFit {
    pub component: usize,
    pub n_train: usize,
    pub kernel: KernelConfig,
    pub log_marginal: f64,
    pub train_rmse_gp: f64,
    pub train_rmse_poly: f64,
    pub validation_rmse_gp: Option<f64>,
    pub validation_rmse_poly: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LearnReport {
    pub components: Vec<ComponentFit>,
    pub probability_bound: f64,
}

/// Residual targets `ẋ − P_k(x) − g(x)u` for one component.
pub fn residual_targets(sys: &ControlAffineSystem, p_k: &[Polynomial], data: &TrajectoryDataset, comp: usize) -> Vec<f64> {
    data.x
        .iter()
        .zip(&data.u)
        .zip(&data.xdot)
        .map(|((x, u), xd)| {
            let gu: f64 = sys.g[comp].iter().zip(u).map(|(g, uj)| g.eval(x) * uj).sum();
            xd[comp] - p_k[comp].eval(x) - gu
        })
        .collect()
}

/// Fits one GP per affected component on the training trajectories and
/// returns the learned surrogate.
pub fn learn_system(
    sys: &ControlAffineSystem,
    poly: &Polynomialized,
    train: &[TrajectoryDataset],
    validation: &[TrajectoryDataset],
    cfg: &LearnConfig,
) -> Result<(LearnedSystem, LearnReport), LearnError> {
    let comps: Vec<usize> = if cfg.components.is_empty() {
        (0..sys.n)
            .filter(|i| sys.d[*i].is_some() || sys.markers.iter().any(|m| m.component == i + 1))
            .collect()
    } else {
        cfg.components.iter().map(|c| c - 1).collect()
    };
    if comps.iter().any(|c| *c >= sys.n) {
        return Err(LearnError::BadData("learn component out of range".into()));
    }
    let stride = cfg.stride.max(1);
    let xs: Vec<Vec<f64>> = train.iter().flat_map(|d| d.x.iter().step_by(stride).cloned()).collect();
    if xs.is_empty() && !comps.is_empty() {
        return Err(LearnError::BadData("no training samples".into()));
    }
    let region = match &cfg.fit_region {
        Some(r) => r.clone(),
        None => Region::bounding(&xs, 0.1, 0.05),
    };
    let mut learned = LearnedSystem::from_polynomials(poly.p.clone(), sys.g.clone());
    learned.xi_bounds = poly.xi_bounds.clone();
    let mut fits = Vec::new();
    for &c in &comps {
        let ys: Vec<f64> = train
            .iter()
            .flat_map(|d| residual_targets(sys, &poly.p, d, c).into_iter().step_by(stride))
            .collect();
        let model = if cfg.grid_search {
            let sf: Vec<f64> = [0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|s| s * cfg.sigma_f).collect();
            let ls: Vec<f64> = [0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|s| s * cfg.lengthscale).collect();
            grid_search(&xs, &ys, &sf, &ls, sys.sigma_n)?
        } else {
            gp_fit(&xs, &ys, &KernelConfig::isotropic(cfg.sigma_f, cfg.lengthscale, sys.sigma_n, sys.n))?
        };
        let mean_points = match cfg.mean_fit {
            MeanFit::Grid => None,
            MeanFit::Data => Some(xs.as_slice()),
        };
        let mut env =
            build_envelope_with_mean_points(&model, cfg.k_delta, cfg.mean_degree, &region, cfg.grid_n, mean_points)?;
        env.delta = cfg.delta;
        let gp_pred: Vec<f64> = xs.iter().map(|x| model.mean(x)).collect();
        let poly_pred: Vec<f64> = xs.iter().map(|x| env.mean_poly.eval(x)).collect();
        let (vg, vp) = if validation.is_empty() {
            (None, None)
        } else {
            let vx: Vec<Vec<f64>> = validation.iter().flat_map(|d| d.x.clone()).collect();
            let vy: Vec<f64> = validation.iter().flat_map(|d| residual_targets(sys, &poly.p, d, c)).collect();
            let g: Vec<f64> = vx.iter().map(|x| model.mean(x)).collect();
            let p: Vec<f64> = vx.iter().map(|x| env.mean_poly.eval(x)).collect();
            (Some(rmse(&g, &vy)), Some(rmse(&p, &vy)))
        };
        fits.push(ComponentFit {
            component: c + 1,
            n_train: xs.len(),
            kernel: model.kernel.clone(),
            log_marginal: model.log_marginal_likelihood(),
            train_rmse_gp: rmse(&gp_pred, &ys),
            train_rmse_poly: rmse(&poly_pred, &ys),
            validation_rmse_gp: vg,
            validation_rmse_poly: vp,
        });
        learned.envelopes[c] = Some(env);
    }
    let m_total: usize = train.iter().map(TrajectoryDataset::len).sum();
    let pb = if m_total > 0 { probability_bound(cfg.delta, m_total)? } else { 1.0 };
    Ok((learned, LearnReport { components: fits, probability_bound: pb }))
}
