use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roa_core::dynamics::{generate_measurements, parse_polynomial, polynomialize, ControlAffineSystem, MarkerReport, TrajectoryDataset};
use roa_core::learn::{learn_system, LearnReport, LearnedSystem, Region};
use roa_core::poly::Polynomial;
use roa_core::sim::{compare_regions, integrate, sample_region, verify_roa, RegionComparison, RoaReport};
use roa_core::synthesis::{plan, run_pipeline, Certificate, CertificateStatus, PlannedSdp, SynthesisProblem};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

/// Max of `V̇` over samples of `{B ≥ 0}`, under the synthesised controller
/// and every disturbance vertex of the learned model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoundnessReport {
    pub samples: usize,
    pub max_vdot: f64,
    pub vertices: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub markers: Vec<MarkerReport>,
    pub learning: LearnReport,
    pub certificate_status: CertificateStatus,
    pub c0: f64,
    pub c: f64,
    pub trace_q: f64,
    pub roa: Option<RoaReport>,
    /// Final region against the initial sublevel set `{V0 ≤ c0}`.
    pub versus_initial_sublevel: Option<RegionComparison>,
    /// Final region against the barrier from the first pass of Loop 2.
    pub versus_first_barrier: Option<RegionComparison>,
    pub soundness: Option<SoundnessReport>,
    pub timings: Vec<(String, f64)>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.certificate_status == CertificateStatus::Verified
            && self.roa.as_ref().is_some_and(|r| r.unsafe_samples == 0 && r.safe_fraction == 1.0)
    }
}

pub struct RunOutcome {
    pub system: ControlAffineSystem,
    pub learned: LearnedSystem,
    pub train: Vec<TrajectoryDataset>,
    pub certificate: Certificate,
    pub report: RunReport,
}

fn stage<E: std::fmt::Display>(name: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::Stage { stage: name.to_string(), message: e.to_string() }
}

pub fn sample_box(cfg: &RunConfig) -> Region {
    cfg.sim.sample_box.clone().or_else(|| cfg.synthesis.validity_box.clone()).expect("validated config has a box")
}

/// Learn, polynomialize and set up the synthesis problem.
pub fn prepare(
    cfg: &RunConfig,
) -> Result<(ControlAffineSystem, Vec<MarkerReport>, LearnedSystem, LearnReport, Vec<TrajectoryDataset>, SynthesisProblem), CliError> {
    let sys = ControlAffineSystem::from_spec(&cfg.system).map_err(|e| CliError::Config(format!("system: {e}")))?;
    let poly = polynomialize(&sys).map_err(stage("polynomialize"))?;
    let controller = cfg
        .data
        .controller
        .iter()
        .map(|e| parse_polynomial(e, sys.n))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(format!("data.controller: {e}")))?;
    let collect = |starts: &[Vec<f64>], offset: u64| -> Result<Vec<TrajectoryDataset>, CliError> {
        starts
            .iter()
            .enumerate()
            .map(|(i, x0)| {
                generate_measurements(&sys, x0, cfg.data.horizon, cfg.data.dt, &controller, cfg.seed.wrapping_add(offset + i as u64))
                    .map_err(stage("measure"))
            })
            .collect()
    };
    let train = collect(&cfg.data.train, 0)?;
    let validation = collect(&cfg.data.validation, 1000)?;
    let (learned, learn_report) = learn_system(&sys, &poly, &train, &validation, &cfg.learn).map_err(stage("learn"))?;
    let prob = SynthesisProblem::from_learned(
        &learned,
        cfg.synthesis.disturbance_mode,
        sys.unsafe_regions.clone(),
        cfg.synthesis.validity_box.as_ref(),
    )
    .map_err(stage("synthesis setup"))?;
    Ok((sys, poly.markers, learned, learn_report, train, prob))
}

pub fn dry_run(cfg: &RunConfig) -> Result<Vec<PlannedSdp>, CliError> {
    let (.., prob) = prepare(cfg)?;
    plan(&prob, &cfg.synthesis).map_err(stage("plan"))
}

pub fn soundness(cert: &Certificate, region: &Region, n: usize, seed: u64) -> Result<SoundnessReport, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = sample_region(|x| cert.b.eval(x) >= 0.0, region, n, 1e-4, &mut rng).map_err(stage("soundness"))?;
    let prob = &cert.problem;
    let mut max_vdot = f64::NEG_INFINITY;
    for drift in &prob.vertices {
        let field: Vec<Polynomial> = (0..prob.n)
            .map(|i| {
                let mut f = drift[i].clone();
                for (g, u) in prob.g[i].iter().zip(&cert.u) {
                    f = &f + &(g * u);
                }
                f
            })
            .collect();
        let vdot = cert.v.lie_derivative(&field).map_err(stage("soundness"))?;
        max_vdot = pts.iter().map(|x| vdot.eval(x)).fold(max_vdot, f64::max);
    }
    Ok(SoundnessReport { samples: pts.len(), max_vdot, vertices: prob.vertices.len() })
}

/// Learn → polynomialize → synthesize → verify.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let mut timings = Vec::new();
    let t0 = Instant::now();
    let (sys, markers, learned, learning, train, prob) = prepare(cfg)?;
    timings.push(("learn".to_string(), t0.elapsed().as_secs_f64()));
    let t1 = Instant::now();
    let cert = run_pipeline(&prob, &cfg.synthesis).map_err(stage("synthesis"))?;
    timings.push(("synthesis".to_string(), t1.elapsed().as_secs_f64()));
    let mut report = RunReport {
        seed: cfg.seed,
        markers,
        learning,
        certificate_status: cert.status.clone(),
        c0: cert.c0,
        c: cert.c,
        trace_q: cert.trace_q,
        roa: None,
        versus_initial_sublevel: None,
        versus_first_barrier: None,
        soundness: None,
        timings,
    };
    if matches!(cert.status, CertificateStatus::Partial { .. }) {
        return Ok(RunOutcome { system: sys, learned, train, certificate: cert, report });
    }
    let t2 = Instant::now();
    let region = sample_box(cfg);
    let mut sim_cfg = cfg.sim.clone();
    sim_cfg.sample_box = Some(region.clone());
    let u = cert.u.clone();
    let rhs = |x: &[f64]| sys.closed_loop(x, &u);
    report.roa = Some(verify_roa(rhs, &cert.b, &sys.unsafe_regions, &sim_cfg, cfg.seed).map_err(stage("verify"))?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(7));
    let in_b = |x: &[f64]| cert.b.eval(x) >= 0.0;
    report.versus_initial_sublevel =
        Some(compare_regions(in_b, |x| cert.v0.eval(x) <= cert.c0, &region, cfg.sim.n_samples, &mut rng));
    report.versus_first_barrier =
        Some(compare_regions(in_b, |x| cert.b_initial.eval(x) >= 0.0, &region, cfg.sim.n_samples, &mut rng));
    report.soundness = Some(soundness(&cert, &region, 10_000, cfg.seed.wrapping_add(11))?);
    report.timings.push(("verify".to_string(), t2.elapsed().as_secs_f64()));
    Ok(RunOutcome { system: sys, learned, train, certificate: cert, report })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Stage { stage: "write".into(), message: format!("{}: {e}", path.display()) })
}

/// Writes `certificate.json`, `report.json`, `config.json`, `history.csv`,
/// the training data and one sample closed-loop trajectory per start point.
pub fn write_artifacts(out: &Path, cfg: &RunConfig, run: &RunOutcome) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Stage { stage: "write".into(), message: e.to_string() })?;
    write(&out.join("config.json"), &cfg.to_json())?;
    write(&out.join("certificate.json"), &run.certificate.to_json())?;
    write(&out.join("report.json"), &serde_json::to_string_pretty(&run.report).expect("report serialises"))?;
    let mut hist = String::from("outer_iter,loop,objective,status\n");
    for h in &run.certificate.history {
        hist.push_str(&format!("{},{},{},{:?}\n", h.outer_iter, h.stage, h.objective, h.status));
    }
    write(&out.join("history.csv"), &hist)?;
    for (i, d) in run.train.iter().enumerate() {
        let f = fs::File::create(out.join(format!("train_{i}.csv"))).map_err(stage("write"))?;
        d.write_csv(f).map_err(stage("write"))?;
    }
    if !matches!(run.certificate.status, CertificateStatus::Partial { .. }) {
        let u = run.certificate.u.clone();
        for (i, x0) in cfg.data.train.iter().chain(&cfg.data.validation).enumerate() {
            let tr = integrate(|x| run.system.closed_loop(x, &u), x0, cfg.sim.horizon, cfg.sim.dt);
            tr.write_csv(&out.join(format!("closed_loop_{i}.csv"))).map_err(stage("write"))?;
        }
    }
    Ok(())
}
