use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use roa_cli::{demos, RunConfig};
use roa_core::synthesis::Certificate;

fn roa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roa")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn linear_config() -> RunConfig {
    let mut cfg = demos::example1();
    cfg.system.f = vec!["-x1+x2".into(), "-x2".into()];
    cfg.system.d = vec!["0".into(), "0".into()];
    cfg.system.markers.clear();
    cfg.learn.components.clear();
    cfg.sim.n_samples = 2000;
    cfg.sim.n_trajectories = 20;
    cfg
}

/// Set ROA_REGENERATE_CONFIGS=1 to rewrite the bundled files.
#[test]
fn bundled_configs_match_demos() {
    for name in demos::NAMES {
        let path = configs_dir().join(format!("{name}.json"));
        let built = demos::by_name(name).unwrap();
        if std::env::var_os("ROA_REGENERATE_CONFIGS").is_some() {
            fs::write(&path, built.to_json() + "\n").unwrap();
        }
        let bundled = RunConfig::load(&path).unwrap();
        assert_eq!(bundled, built, "{} is out of date", path.display());
    }
}

#[test]
fn demo_hyperparameters_follow_the_examples() {
    let e1 = demos::example1();
    assert!((e1.learn.sigma_f - 0.1f64.exp()).abs() < 1e-15);
    assert!((e1.learn.lengthscale - 0.2f64.exp()).abs() < 1e-15);
    assert_eq!(e1.data.train[0], vec![-0.5, 0.2]);
    assert_eq!(e1.data.validation[0], vec![-0.4, 0.4]);
    assert_eq!(e1.system.markers[0].k, 4);
    assert_eq!(e1.system.markers[0].interval, [-2.0, 2.0]);

    let e2 = demos::example2();
    assert_eq!(e2.data.dt, 0.05);
    assert_eq!(e2.data.horizon, 30.0);
    assert_eq!((e2.learn.sigma_f, e2.learn.lengthscale), (0.1, 0.2));
    assert_eq!(e2.data.train[0], vec![-0.1, 0.1, 0.1]);
    assert_eq!(e2.data.validation[0], vec![-0.1, -0.2, 0.1]);
    assert!(e2.system.markers.iter().all(|m| m.interval == [-5.0, 5.0]));
}

#[test]
fn malformed_config_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut v: serde_json::Value = serde_json::from_str(&demos::example1().to_json()).unwrap();
    v["learn"]["sigma_f"] = serde_json::json!("large");
    fs::write(&bad, v.to_string()).unwrap();
    let o = roa(&["run", "--config", bad.to_str().unwrap(), "--dry-run"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("learn.sigma_f"), "{}", stderr(&o));

    v["learn"]["sigma_f"] = serde_json::json!(1.0);
    v["synthesis"]["bogus"] = serde_json::json!(1);
    fs::write(&bad, v.to_string()).unwrap();
    let o = roa(&["run", "--config", bad.to_str().unwrap(), "--dry-run"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));

    v["synthesis"] = serde_json::json!({});
    v["data"]["controller"] = serde_json::json!(["-x1"]);
    fs::write(&bad, v.to_string()).unwrap();
    let o = roa(&["run", "--config", bad.to_str().unwrap(), "--dry-run"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("data.controller"), "{}", stderr(&o));

    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&roa(&["run", "--config", bad.to_str().unwrap()])), 2);
    assert_eq!(code(&roa(&["run", "--config", "/nonexistent/roa.json"])), 2);
}

#[test]
fn unknown_demo_exits_2() {
    let o = roa(&["demo", "example9", "--dry-run"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unsolvable_system_exits_1_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = linear_config();
    // no input reaches the unstable mode
    cfg.system.f = vec!["x1".into(), "-x2".into()];
    cfg.system.g = vec![vec!["0".into(), "0".into()], vec!["0".into(), "1".into()]];
    let path = dir.path().join("cfg.json");
    fs::write(&path, cfg.to_json()).unwrap();
    let out = dir.path().join("out");
    let o = roa(&["run", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("synthesis"), "{}", stderr(&o));
}

#[test]
fn dry_run_plans_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = configs_dir().join("example1.json");
    let o = roa(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--dry-run"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    for stage in ["loop1", "loop2_controller", "loop2_barrier", "loop3"] {
        assert!(text.lines().any(|l| l.starts_with(stage)), "missing {stage}: {text}");
    }
    assert!(!out.exists());
}

#[test]
fn demo_is_an_alias_for_the_bundled_config() {
    let cfg = configs_dir().join("example2.json");
    let a = roa(&["demo", "example2", "--dry-run"]);
    let b = roa(&["run", "--config", cfg.to_str().unwrap(), "--dry-run"]);
    assert_eq!(code(&a), 0);
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn linear_run_writes_artifacts_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(&path, linear_config().to_json()).unwrap();
    let out = dir.path().join("out");
    let o = roa(&["run", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["config.json", "certificate.json", "report.json", "history.csv", "train_0.csv", "closed_loop_0.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let cert = out.join("certificate.json");
    let v = roa(&["verify", "--certificate", cert.to_str().unwrap()]);
    assert_eq!(code(&v), 0, "{}", stdout(&v));
}

fn polynomials(cert: &Certificate) -> String {
    serde_json::to_string(&(&cert.v, &cert.b, &cert.u)).unwrap()
}

#[test]
fn example1_run_is_reproducible_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("example1.json");
    let mut certs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("run{i}"));
        let o = roa(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let text = fs::read_to_string(out.join("certificate.json")).unwrap();
        certs.push(Certificate::from_json(&text).unwrap());
    }
    assert_eq!(polynomials(&certs[0]), polynomials(&certs[1]));

    let cert_path = dir.path().join("run0/certificate.json");
    let plot = dir.path().join("plot");
    let o = roa(&[
        "export-plot",
        "--certificate",
        cert_path.to_str().unwrap(),
        "--grid",
        "200",
        "--half-width",
        "8",
        "--out",
        plot.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["levels_V.csv", "levels_B.csv", "unsafe_grid.csv"] {
        let rows = csv::Reader::from_path(plot.join(f)).unwrap().records().count();
        assert_eq!(rows, 40_000, "{f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(plot.join("regions_summary.json")).unwrap()).unwrap();
    assert!(summary["b_at_origin"].as_f64().unwrap() > 0.0);
    assert!(summary["v_at_origin"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(summary["overlap_points"].as_u64(), Some(0));

    let disks = [(-4.0, 5.0, 4.0), (0.0, -5.0, 4.0), (5.0, 0.0, 5.0)];
    let mut reader = csv::Reader::from_path(plot.join("unsafe_grid.csv")).unwrap();
    for rec in reader.records() {
        let rec = rec.unwrap();
        let x: Vec<f64> = (0..3).map(|i| rec[i].parse().unwrap()).collect();
        let inside = disks.iter().any(|(a, b, r2)| (x[0] - a).powi(2) + (x[1] - b).powi(2) <= *r2);
        let marked = x[2] <= 0.0;
        assert_eq!(inside, marked, "at ({}, {})", x[0], x[1]);
    }
}

#[test]
fn export_rejects_huge_grids() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(&path, linear_config().to_json()).unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&roa(&["run", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()])), 0);
    let cert = out.join("certificate.json");
    let o = roa(&["export-plot", "--certificate", cert.to_str().unwrap(), "--grid", "1001", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}
