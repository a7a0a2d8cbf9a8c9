//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roa_cli::demos;
use roa_cli::run::{execute, RunOutcome};
use roa_core::approx::{fit_interpolant, remainder_bound, sup_error};
use roa_core::dynamics::{generate_measurements, polynomialize, ControlAffineSystem, SystemSpec};
use roa_core::learn::{learn_system, LearnConfig, MeanFit};
use roa_core::poly::{monomial_basis, GramRepresentation, Polynomial};
use roa_core::sim::RegionComparison;
use roa_core::sosprog::{AffinePoly, SolveStatus, SolverSettings, SosProgram};

const RHO: f64 = 2.0;
const CHEB_TIME: Duration = Duration::from_secs(1);
const GRAM_TRIALS: usize = 20;
const MIN_GRAM_EIG: f64 = -1e-7;
const SOS_TIME: Duration = Duration::from_secs(30);
const MONOTONE_TOL: f64 = 1e-6;
const EXAMPLE1_TIME: Duration = Duration::from_secs(600);
const EXAMPLE2_TIME: Duration = Duration::from_secs(1800);
const SIGMAS: f64 = 3.0;
const REGION_SAMPLES: usize = 100_000;
const TRAJECTORIES: usize = 1000;
const RMSE_FACTOR: f64 = 5.0;
const SOUNDNESS_SAMPLES: usize = 10_000;
const VDOT_TOL: f64 = 1e-6;

struct Ledger {
    lines: Vec<(bool, String)>,
}

impl Ledger {
    fn record(&mut self, id: &str, ok: bool, detail: String) {
        let line = format!("{} {id}: {detail}", if ok { "PASS" } else { "FAIL" });
        // bypasses libtest capture so the lines show up without --nocapture
        let _ = writeln!(std::io::stderr(), "{line}");
        self.lines.push((ok, line));
    }
}

/// `c_m` bounds `|f|` on the Bernstein ellipse with parameter `RHO`, whose
/// semi-axes are `(ρ + 1/ρ)/2` and `(ρ − 1/ρ)/2`.
fn chebyshev(ledger: &mut Ledger) {
    let started = Instant::now();
    let a = 0.5 * (RHO + 1.0 / RHO);
    let b = 0.5 * (RHO - 1.0 / RHO);
    let cases: [(&str, fn(f64) -> f64, f64); 2] = [("exp", f64::exp, a.exp()), ("sin", f64::sin, b.cosh())];
    let mut worst = 0.0_f64;
    let mut ok = true;
    for (name, f, c_m) in cases {
        for k in 4..=12 {
            let interp = fit_interpolant(f, k, -1.0, 1.0).unwrap();
            let err = sup_error(f, &interp, 10_000);
            let bound = remainder_bound(c_m, RHO, k).unwrap();
            worst = worst.max(err / bound);
            if err > bound {
                ok = false;
                println!("  {name} k = {k}: error {err:.3e} > bound {bound:.3e}");
            }
        }
    }
    let t = started.elapsed();
    ledger.record(
        "1 chebyshev bound",
        ok && t < CHEB_TIME,
        format!("rho = {RHO}, worst error/bound = {worst:.3e}, {:.3}s", t.as_secs_f64()),
    );
}

fn motzkin() -> Polynomial {
    let x2 = Polynomial::var(2, 0).pow(2);
    let y2 = Polynomial::var(2, 1).pow(2);
    &(&(&(&x2.pow(2) * &y2) + &(&x2 * &y2.pow(2))) - &(&x2 * &y2).scale(3.0)) + &Polynomial::constant(2, 1.0)
}

fn sos_oracle(ledger: &mut Ledger) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let settings = SolverSettings::default();
    let mut accepted = 0;
    let mut min_eig = f64::INFINITY;
    let mut optimal_verified = true;
    for trial in 0..GRAM_TRIALS {
        let nvars = 1 + trial % 3;
        let basis = monomial_basis(nvars, 1 + (trial % 2) as u32);
        let r = DMatrix::from_fn(basis.len(), basis.len(), |_, _| rng.random_range(-1.0..1.0));
        let q = &r * r.transpose() + DMatrix::identity(basis.len(), basis.len()) * 1e-3;
        let p = GramRepresentation::new(basis, q).unwrap().expand();
        let mut prog = SosProgram::new(nvars);
        prog.add_sos_constraint("p", AffinePoly::from_poly(p)).unwrap();
        let res = prog.solve(&settings).unwrap();
        if res.status == SolveStatus::Optimal {
            accepted += 1;
            let report = res.verification.as_ref().expect("optimal results are verified");
            let eig = report.checks.iter().map(|c| c.min_eigenvalue).fold(f64::INFINITY, f64::min);
            min_eig = min_eig.min(eig);
            optimal_verified &= report.passed && eig >= MIN_GRAM_EIG;
        }
    }
    let mut prog = SosProgram::new(2);
    prog.add_sos_constraint("motzkin", AffinePoly::from_poly(motzkin())).unwrap();
    let motzkin_status = prog.solve(&settings).unwrap().status;
    let t = started.elapsed();
    ledger.record(
        "2 sos oracle",
        accepted == GRAM_TRIALS && motzkin_status == SolveStatus::Infeasible && optimal_verified && t < SOS_TIME,
        format!(
            "{accepted}/{GRAM_TRIALS} gram polynomials accepted, min eigenvalue {min_eig:.2e}, motzkin {motzkin_status:?}, {:.1}s",
            t.as_secs_f64()
        ),
    );
}

fn non_decreasing(seq: &[f64]) -> bool {
    seq.windows(2).all(|w| w[1] >= w[0] - MONOTONE_TOL)
}

fn monotonicity(ledger: &mut Ledger, run: &RunOutcome, elapsed: Duration) {
    let cert = &run.certificate;
    let cfg = &cert.config;
    let c_ok = cert.c_history.iter().all(|s| non_decreasing(s));
    let t_ok = cert.trace_history.iter().all(|s| non_decreasing(s));
    let outer = cert.history.iter().map(|h| h.outer_iter).max().map_or(0, |m| m + 1);
    let within_caps = outer <= cfg.outer_max_iters
        && cert.c_history.iter().all(|s| s.len() <= cfg.loop1_max_iters + 1)
        && cert.trace_history.iter().all(|s| s.len() <= cfg.loop2_max_iters + 1);
    ledger.record(
        "3 example1 monotonicity",
        c_ok && t_ok && within_caps && elapsed < EXAMPLE1_TIME,
        format!(
            "c {:?}, trace {:?}, {outer} outer iterations, {:.1}s",
            cert.c_history,
            cert.trace_history,
            elapsed.as_secs_f64()
        ),
    );
}

/// `a` strictly larger than `b` with a `SIGMAS` margin; when `b` has no hits
/// the ratio is undefined and the difference is tested instead.
fn larger(cmp: &RegionComparison) -> (bool, String) {
    let (r, se) = (cmp.ratio, cmp.ratio_std_error);
    if r.is_finite() && se.is_finite() {
        return (r - SIGMAS * se > 1.0, format!("ratio {r:.3} ± {se:.3}"));
    }
    let (a, b) = (&cmp.measure_a, &cmp.measure_b);
    let margin = SIGMAS * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    (a.estimate - b.estimate > margin, format!("measure {:.4} vs {:.4} (no hits in the smaller set)", a.estimate, b.estimate))
}

fn end_to_end(ledger: &mut Ledger, id: &str, run: &RunOutcome, loop3_check: bool, elapsed: Duration, limit: Duration) {
    let rep = &run.report;
    let verified = run.certificate.is_verified();
    let Some(roa) = &rep.roa else {
        ledger.record(id, false, format!("no monte carlo report; certificate {:?}", rep.certificate_status));
        return;
    };
    let a = roa.unsafe_samples == 0 && roa.n_samples >= REGION_SAMPLES;
    let (b, b_detail) = larger(rep.versus_initial_sublevel.as_ref().expect("comparison runs with the report"));
    let c = roa.n_trajectories >= TRAJECTORIES && roa.converged_fraction == 1.0 && roa.safe_fraction == 1.0;
    let (d, d_detail) = if loop3_check {
        let (ok, s) = larger(rep.versus_first_barrier.as_ref().expect("comparison runs with the report"));
        (ok, format!(", B* vs B {s}"))
    } else {
        (true, String::new())
    };
    ledger.record(
        id,
        verified && a && b && c && d && elapsed < limit,
        format!(
            "verified {verified}; {} unsafe of {} samples; vs c0 sublevel {b_detail}; {} trajectories, converged {:.4}, safe {:.4}{d_detail}; {:.1}s",
            roa.unsafe_samples,
            roa.n_samples,
            roa.n_trajectories,
            roa.converged_fraction,
            roa.safe_fraction,
            elapsed.as_secs_f64()
        ),
    );
}

fn learning(ledger: &mut Ledger) {
    let spec = SystemSpec {
        n: 2,
        m: 2,
        f: vec!["-x1+x2".into(), "-x1-x2".into()],
        g: vec![vec!["1".into(), "0".into()], vec!["0".into(), "1".into()]],
        d: vec!["0".into(), "0.3*x1^2-0.2*x1*x2+0.1*x2^3".into()],
        sigma_n: 0.01,
        markers: vec![],
        unsafe_regions: vec![],
    };
    let sys = ControlAffineSystem::from_spec(&spec).unwrap();
    let poly = polynomialize(&sys).unwrap();
    let collect = |starts: &[[f64; 2]], seed: u64| -> Vec<_> {
        starts
            .iter()
            .enumerate()
            .map(|(i, x0)| generate_measurements(&sys, x0, 10.0, 0.1, &[], seed + i as u64).unwrap())
            .collect()
    };
    let train = collect(&[[-1.0, 1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, -1.0]], 10);
    let validation = collect(&[[0.5, 0.8], [-0.7, 0.3]], 100);
    let cfg = LearnConfig {
        sigma_f: 0.1f64.exp(),
        lengthscale: 0.2f64.exp(),
        components: vec![2],
        k_delta: 2.0,
        delta: 0.05,
        mean_degree: 4,
        grid_n: 25,
        fit_region: None,
        stride: 1,
        grid_search: false,
        mean_fit: MeanFit::Grid,
    };
    let (_, report) = learn_system(&sys, &poly, &train, &validation, &cfg).unwrap();
    let fit = &report.components[0];
    let (gp, pm) = (fit.validation_rmse_gp.unwrap(), fit.validation_rmse_poly.unwrap());
    ledger.record(
        "6 learning rmse",
        pm <= RMSE_FACTOR * gp,
        format!("validation rmse: polynomial mean {pm:.3e}, gp {gp:.3e}, ratio {:.2}", pm / gp),
    );
}

fn soundness(ledger: &mut Ledger, runs: &[(&str, &RunOutcome)]) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, run) in runs {
        match &run.report.soundness {
            Some(s) => {
                ok &= s.samples >= SOUNDNESS_SAMPLES && s.max_vdot <= VDOT_TOL;
                parts.push(format!("{name} max Vdot {:.3e} over {} samples x {} vertices", s.max_vdot, s.samples, s.vertices));
            }
            None => {
                ok = false;
                parts.push(format!("{name} has no soundness report"));
            }
        }
    }
    ledger.record("7 soundness sampling", ok, parts.join("; "));
}

#[test]
fn acceptance() {
    let mut ledger = Ledger { lines: Vec::new() };
    chebyshev(&mut ledger);
    sos_oracle(&mut ledger);

    let started = Instant::now();
    let ex1 = execute(&demos::example1()).expect("example 1 runs");
    let t1 = started.elapsed();
    monotonicity(&mut ledger, &ex1, t1);
    end_to_end(&mut ledger, "4 example1 end to end", &ex1, false, t1, EXAMPLE1_TIME);

    let started = Instant::now();
    let ex2 = execute(&demos::example2()).expect("example 2 runs");
    let t2 = started.elapsed();
    end_to_end(&mut ledger, "5 example2 end to end", &ex2, true, t2, EXAMPLE2_TIME);

    learning(&mut ledger);
    soundness(&mut ledger, &[("example1", &ex1), ("example2", &ex2)]);

    let failed: Vec<&String> = ledger.lines.iter().filter(|(ok, _)| !ok).map(|(_, l)| l).collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n"));
}
