//! Grid exports of a certificate for plotting.

use std::fs;
use std::path::Path;

use roa_core::poly::Polynomial;
use roa_core::synthesis::Certificate;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MAX_GRID_POINTS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionsSummary {
    pub nvars: usize,
    pub grid: usize,
    pub half_width: f64,
    pub slices: Vec<f64>,
    pub rows: usize,
    pub b_at_origin: f64,
    pub v_at_origin: f64,
    /// Grid estimates (cell count × cell measure) per slice for 3-D.
    pub region_measure: Vec<f64>,
    pub sublevel_measure: Vec<f64>,
    pub unsafe_measure: Vec<f64>,
    /// Grid points inside both the region and an unsafe set.
    pub overlap_points: usize,
}

fn points(n: usize, grid: usize, half_width: f64, slices: &[f64]) -> Result<Vec<Vec<f64>>, CliError> {
    if grid < 2 {
        return Err(CliError::Config("grid needs at least 2 points per axis".into()));
    }
    let total = match n {
        1 => grid,
        2 => grid.saturating_mul(grid),
        3 => grid.saturating_mul(grid).saturating_mul(slices.len()),
        _ => return Err(CliError::Config(format!("export supports 1 to 3 variables, got {n}"))),
    };
    if total > MAX_GRID_POINTS {
        return Err(CliError::Config(format!("grid of {total} points exceeds the limit of {MAX_GRID_POINTS}")));
    }
    let axis: Vec<f64> = (0..grid).map(|i| -half_width + 2.0 * half_width * i as f64 / (grid - 1) as f64).collect();
    let mut out = Vec::with_capacity(total);
    match n {
        1 => out.extend(axis.iter().map(|&a| vec![a])),
        2 => {
            for &a in &axis {
                for &b in &axis {
                    out.push(vec![a, b]);
                }
            }
        }
        _ => {
            for &z in slices {
                for &a in &axis {
                    for &b in &axis {
                        out.push(vec![a, b, z]);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn write_grid(path: &Path, pts: &[Vec<f64>], value: impl Fn(&[f64]) -> f64) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Stage { stage: "export".into(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let n = pts[0].len();
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.push("value".into());
    w.write_record(&header).map_err(io)?;
    for p in pts {
        let mut row: Vec<String> = p.iter().map(f64::to_string).collect();
        row.push(value(p).to_string());
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Stage { stage: "export".into(), message: e.to_string() })
}

fn min_unsafe(regions: &[Polynomial], x: &[f64]) -> f64 {
    regions.iter().map(|m| m.eval(x)).fold(f64::INFINITY, f64::min)
}

/// Writes `levels_V.csv`, `levels_B.csv`, `unsafe_grid.csv` (minimum of the
/// unsafe polynomials, so cells with `value ≤ 0` are unsafe) and
/// `regions_summary.json`.
pub fn export_plot(cert: &Certificate, grid: usize, half_width: f64, slices: &[f64], out: &Path) -> Result<RegionsSummary, CliError> {
    let n = cert.nvars;
    let pts = points(n, grid, half_width, slices)?;
    fs::create_dir_all(out).map_err(|e| CliError::Stage { stage: "export".into(), message: e.to_string() })?;
    let unsafe_regions = &cert.problem.unsafe_regions;
    write_grid(&out.join("levels_V.csv"), &pts, |x| cert.v.eval(x))?;
    write_grid(&out.join("levels_B.csv"), &pts, |x| cert.b.eval(x))?;
    write_grid(&out.join("unsafe_grid.csv"), &pts, |x| min_unsafe(unsafe_regions, x))?;

    let h = 2.0 * half_width / (grid - 1) as f64;
    let cell = h.powi(n.min(2) as i32);
    let per_slice = if n == 3 { grid * grid } else { pts.len() };
    let mut region_measure = Vec::new();
    let mut sublevel_measure = Vec::new();
    let mut unsafe_measure = Vec::new();
    for chunk in pts.chunks(per_slice) {
        let count = |pred: &dyn Fn(&[f64]) -> bool| chunk.iter().filter(|x| pred(x)).count() as f64 * cell;
        region_measure.push(count(&|x| cert.b.eval(x) >= 0.0));
        sublevel_measure.push(count(&|x| cert.v.eval(x) <= cert.c));
        unsafe_measure.push(count(&|x| min_unsafe(unsafe_regions, x) <= 0.0));
    }
    let overlap_points = pts.iter().filter(|x| cert.b.eval(x) >= 0.0 && min_unsafe(unsafe_regions, x) <= 0.0).count();
    let origin = vec![0.0; n];
    let summary = RegionsSummary {
        nvars: n,
        grid,
        half_width,
        slices: if n == 3 { slices.to_vec() } else { vec![] },
        rows: pts.len(),
        b_at_origin: cert.b.eval(&origin),
        v_at_origin: cert.v.eval(&origin),
        region_measure,
        sublevel_measure,
        unsafe_measure,
        overlap_points,
    };
    fs::write(out.join("regions_summary.json"), serde_json::to_string_pretty(&summary).expect("summary serialises"))
        .map_err(|e| CliError::Stage { stage: "export".into(), message: e.to_string() })?;
    Ok(summary)
}
