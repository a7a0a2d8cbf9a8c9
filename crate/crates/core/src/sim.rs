//! Closed-loop simulation and Monte-Carlo checks of a certified region.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{rk4_step, ESCAPE_NORM};
use crate::learn::Region;
use crate::poly::Polynomial;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("acceptance rate {rate:.2e} of the sampling region is below {min:.0e}")]
    DegenerateRegion { rate: f64, min: f64 },
    #[error("invalid simulation setting: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    /// `‖x‖` exceeded the escape norm or became non-finite.
    pub escaped: bool,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.x.last().expect("trajectory holds x0")
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.x[0].len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (t, x) in self.t.iter().zip(&self.x) {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// RK4 from `x0` over `[0, horizon]`; stops early on escape.
pub fn integrate<F>(f: F, x0: &[f64], horizon: f64, dt: f64) -> Trajectory
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let steps = (horizon / dt).round().max(0.0) as usize;
    let mut t = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity(steps + 1);
    t.push(0.0);
    xs.push(x0.to_vec());
    let mut x = x0.to_vec();
    let mut escaped = false;
    for k in 1..=steps {
        x = rk4_step(&f, &x, dt);
        let nx = norm(&x);
        if !(nx <= ESCAPE_NORM) {
            escaped = true;
            break;
        }
        t.push(k as f64 * dt);
        xs.push(x.clone());
    }
    Trajectory { t, x: xs, escaped }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_samples: usize,
    pub n_trajectories: usize,
    pub horizon: f64,
    pub dt: f64,
    pub convergence_radius: f64,
    /// Box the certified region is sampled from.
    pub sample_box: Option<Region>,
    pub min_acceptance: f64,
    pub max_witnesses: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_samples: 100_000,
            n_trajectories: 1_000,
            horizon: 30.0,
            dt: 0.01,
            convergence_radius: 0.05,
            sample_box: None,
            min_acceptance: 1e-4,
            max_witnesses: 10,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || !(self.convergence_radius > 0.0) {
            return Err(SimError::Invalid("dt, horizon and convergence_radius must be positive".into()));
        }
        if let Some(b) = &self.sample_box {
            if !b.is_valid() {
                return Err(SimError::Invalid("sample_box must have lo < hi".into()));
            }
        }
        Ok(())
    }
}

fn uniform(b: &Region, rng: &mut impl Rng) -> Vec<f64> {
    b.lo.iter().zip(&b.hi).map(|(lo, hi)| rng.random_range(*lo..*hi)).collect()
}

/// `count` uniform points of `{pred}` inside `b`, by rejection.
pub fn sample_region<P>(pred: P, b: &Region, count: usize, min_rate: f64, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>, SimError>
where
    P: Fn(&[f64]) -> bool,
{
    let mut out = Vec::with_capacity(count);
    let mut draws = 0usize;
    let probe = (10.0 / min_rate).ceil() as usize;
    while out.len() < count {
        let x = uniform(b, rng);
        draws += 1;
        if pred(&x) {
            out.push(x);
        }
        if draws >= probe && (out.len() as f64) < min_rate * draws as f64 {
            return Err(SimError::DegenerateRegion { rate: out.len() as f64 / draws as f64, min: min_rate });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub hits: usize,
    pub n: usize,
}

/// Monte-Carlo Lebesgue measure of `{pred}` within `b`.
pub fn estimate_measure<P>(pred: P, b: &Region, n: usize, rng: &mut impl Rng) -> MeasureEstimate
where
    P: Fn(&[f64]) -> bool,
{
    let hits = (0..n).filter(|_| pred(&uniform(b, rng))).count();
    let p = hits as f64 / n.max(1) as f64;
    let vol = b.volume();
    MeasureEstimate { estimate: p * vol, std_error: vol * (p * (1.0 - p) / n.max(1) as f64).sqrt(), hits, n }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionComparison {
    pub measure_a: MeasureEstimate,
    pub measure_b: MeasureEstimate,
    /// `|A| / |B|` with a delta-method standard error from the shared sample.
    pub ratio: f64,
    pub ratio_std_error: f64,
    /// Fraction of `A`'s samples also in `B`.
    pub a_in_b: f64,
}

/// Compares two regions on one shared uniform sample of `b`.
pub fn compare_regions<PA, PB>(a: PA, bp: PB, b: &Region, n: usize, rng: &mut impl Rng) -> RegionComparison
where
    PA: Fn(&[f64]) -> bool,
    PB: Fn(&[f64]) -> bool,
{
    let (mut na, mut nb, mut nab) = (0usize, 0usize, 0usize);
    for _ in 0..n {
        let x = uniform(b, rng);
        let (ia, ib) = (a(&x), bp(&x));
        na += ia as usize;
        nb += ib as usize;
        nab += (ia && ib) as usize;
    }
    let nf = n.max(1) as f64;
    let (pa, pb, pab) = (na as f64 / nf, nb as f64 / nf, nab as f64 / nf);
    let vol = b.volume();
    let est = |h: usize, p: f64| MeasureEstimate { estimate: p * vol, std_error: vol * (p * (1.0 - p) / nf).sqrt(), hits: h, n };
    let ratio = if nb > 0 { pa / pb } else { f64::INFINITY };
    let ratio_std_error = if na > 0 && nb > 0 {
        let var = ratio * ratio * ((1.0 - pa) / (pa * nf) + (1.0 - pb) / (pb * nf) - 2.0 * (pab - pa * pb) / (pa * pb * nf));
        var.max(0.0).sqrt()
    } else {
        f64::INFINITY
    };
    RegionComparison {
        measure_a: est(na, pa),
        measure_b: est(nb, pb),
        ratio,
        ratio_std_error,
        a_in_b: if na > 0 { nab as f64 / na as f64 } else { f64::NAN },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x0: Vec<f64>,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoaReport {
    pub n_samples: usize,
    /// Sampled points of `{B ≥ 0}` lying in an unsafe set.
    pub unsafe_samples: usize,
    pub n_trajectories: usize,
    pub converged_fraction: f64,
    pub safe_fraction: f64,
    pub escaped: usize,
    pub witnesses: Vec<Witness>,
    pub measure: MeasureEstimate,
}

impl RoaReport {
    pub fn all_ok(&self) -> bool {
        self.unsafe_samples == 0 && self.converged_fraction == 1.0 && self.safe_fraction == 1.0
    }

    pub fn write_json(&self, path: &Path) -> Result<(), SimError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(serde_json::to_string_pretty(self).expect("report serialises").as_bytes())?;
        Ok(())
    }
}

fn in_unsafe(unsafe_regions: &[Polynomial], x: &[f64]) -> bool {
    unsafe_regions.iter().any(|m| m.eval(x) <= 0.0)
}

/// Samples `{B ≥ 0}`, checks each sample against the unsafe sets, and
/// simulates trajectories from a subset: each must stay safe and end within
/// the convergence radius.
pub fn verify_roa<F>(
    rhs: F,
    b: &Polynomial,
    unsafe_regions: &[Polynomial],
    cfg: &SimConfig,
    seed: u64,
) -> Result<RoaReport, SimError>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    cfg.validate()?;
    let sample_box = cfg
        .sample_box
        .clone()
        .ok_or_else(|| SimError::Invalid("sample_box is required to sample the region".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inside = |x: &[f64]| b.eval(x) >= 0.0;
    let points = sample_region(inside, &sample_box, cfg.n_samples, cfg.min_acceptance, &mut rng)?;
    let mut witnesses = Vec::new();
    let unsafe_pts: Vec<&Vec<f64>> = points.iter().filter(|x| in_unsafe(unsafe_regions, x)).collect();
    for x in unsafe_pts.iter().take(cfg.max_witnesses) {
        witnesses.push(Witness { x0: x.to_vec(), reason: "sample of the region lies in an unsafe set".into() });
    }
    let starts: Vec<&Vec<f64>> = points.iter().take(cfg.n_trajectories).collect();
    let outcomes: Vec<(bool, bool, bool)> = starts
        .par_iter()
        .map(|x0| {
            let tr = integrate(&rhs, x0, cfg.horizon, cfg.dt);
            let safe = !tr.x.iter().any(|x| in_unsafe(unsafe_regions, x));
            let converged = !tr.escaped && norm(tr.last()) <= cfg.convergence_radius;
            (converged, safe, tr.escaped)
        })
        .collect();
    for (x0, (conv, safe, esc)) in starts.iter().zip(&outcomes) {
        if witnesses.len() >= cfg.max_witnesses {
            break;
        }
        if !conv || !safe {
            let reason = match (esc, safe) {
                (true, _) => "trajectory escaped",
                (false, false) => "trajectory entered an unsafe set",
                _ => "trajectory did not reach the convergence radius",
            };
            witnesses.push(Witness { x0: x0.to_vec(), reason: reason.into() });
        }
    }
    let nt = outcomes.len().max(1) as f64;
    let measure = estimate_measure(inside, &sample_box, cfg.n_samples, &mut rng);
    Ok(RoaReport {
        n_samples: points.len(),
        unsafe_samples: unsafe_pts.len(),
        n_trajectories: outcomes.len(),
        converged_fraction: outcomes.iter().filter(|o| o.0).count() as f64 / nt,
        safe_fraction: outcomes.iter().filter(|o| o.1).count() as f64 / nt,
        escaped: outcomes.iter().filter(|o| o.2).count(),
        witnesses,
        measure,
    })
}
