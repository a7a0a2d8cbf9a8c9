//! Configuration, orchestration and file output for the `roa` binary.

pub mod config;
pub mod demos;
pub mod export;
pub mod run;

use std::path::{Path, PathBuf};

use roa_core::synthesis::{check_certificate, Certificate, CertificateStatus};
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { .. } => 1,
        }
    }
}

/// Output directory: the flag wins over the config, then `./out`.
pub fn resolve_out(cfg: &RunConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf).or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

/// Runs the whole pipeline and writes artifacts. Returns the process exit
/// code: 0 iff the certificate verified and every simulated trajectory
/// stayed safe.
pub fn cmd_run(cfg: &RunConfig, out: &Path, dry_run: bool) -> Result<i32, CliError> {
    if dry_run {
        for p in run::dry_run(cfg)? {
            println!(
                "{:<18} vars {:>6}  rows {:>6}  equalities {:>6}  psd blocks {:?}",
                p.stage, p.variables, p.rows, p.equalities, p.psd_blocks
            );
        }
        return Ok(0);
    }
    let outcome = run::execute(cfg)?;
    run::write_artifacts(out, cfg, &outcome)?;
    let report = &outcome.report;
    println!("certificate: {:?}", report.certificate_status);
    if let Some(r) = &report.roa {
        println!(
            "monte carlo: {} region samples, {} unsafe; {} trajectories, converged {:.4}, safe {:.4}",
            r.n_samples, r.unsafe_samples, r.n_trajectories, r.converged_fraction, r.safe_fraction
        );
    }
    println!("artifacts written to {}", out.display());
    if report.passed() {
        Ok(0)
    } else {
        let stage = match &report.certificate_status {
            CertificateStatus::Partial { stage, .. } => stage.clone(),
            CertificateStatus::Unverified { .. } => "verify_certificate".into(),
            CertificateStatus::Verified => "monte_carlo".into(),
        };
        eprintln!("stage `{stage}` failed");
        Ok(1)
    }
}

pub fn load_certificate(path: &Path) -> Result<Certificate, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    Certificate::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Re-checks every SOS condition stored in a certificate file.
pub fn cmd_verify(path: &Path) -> Result<i32, CliError> {
    let cert = load_certificate(path)?;
    let report = check_certificate(&cert);
    for c in &report.checks {
        println!("{:<5} {:<16} min eig {:>11.3e}  residual {:>10.3e}", if c.passed { "ok" } else { "FAIL" }, c.name, c.min_eigenvalue, c.residual);
    }
    Ok(if report.passed { 0 } else { 1 })
}
