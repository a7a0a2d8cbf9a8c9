//! Built-in configurations for the two worked examples.

use roa_core::dynamics::{Marker, SystemSpec};
use roa_core::learn::{LearnConfig, MeanFit, Region};
use roa_core::sim::SimConfig;
use roa_core::synthesis::SynthesisConfig;

use crate::config::{DataConfig, PlotConfig, RunConfig};

pub const NAMES: [&str; 2] = ["example1", "example2"];

pub fn by_name(name: &str) -> Option<RunConfig> {
    match name {
        "example1" => Some(example1()),
        "example2" => Some(example2()),
        _ => None,
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn identity(n: usize) -> Vec<Vec<String>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { "1" } else { "0" }.to_string()).collect()).collect()
}

/// Planar system with three unsafe disks.
pub fn example1() -> RunConfig {
    // x1 stays inside (-pi/2, pi/2), where the marker is smooth
    let validity = Region::new(vec![-1.2, -4.0], vec![1.2, 4.0]);
    RunConfig {
        system: SystemSpec {
            n: 2,
            m: 2,
            f: strings(&["-x1+x2", "x1^2*x2+1-sqrt(abs(exp(x1)*cos(x1)))"]),
            g: identity(2),
            d: strings(&["0", "0.05*x1^2"]),
            sigma_n: 0.01,
            markers: vec![Marker {
                component: 2,
                expr: "sqrt(abs(exp(x1)*cos(x1)))".into(),
                k: 4,
                interval: [-2.0, 2.0],
                c_m: None,
                rho: None,
            }],
            unsafe_regions: strings(&["(x1+4)^2+(x2-5)^2-4", "x1^2+(x2+5)^2-4", "(x1-5)^2+x2^2-5"]),
        },
        data: DataConfig {
            train: vec![
                vec![-0.5, 0.2],
                vec![1.0, 3.0],
                vec![-1.0, -3.0],
                vec![1.0, -3.0],
                vec![-1.0, 3.0],
                vec![1.1, 0.0],
                vec![-1.1, 0.0],
                vec![0.0, 3.5],
                vec![0.0, -3.5],
            ],
            validation: vec![vec![-0.4, 0.4], vec![0.8, -2.0]],
            horizon: 30.0,
            dt: 0.1,
            controller: strings(&["-2*x1", "-2*x2"]),
        },
        learn: LearnConfig {
            sigma_f: 0.1f64.exp(),
            lengthscale: 0.2f64.exp(),
            components: vec![2],
            k_delta: 2.0,
            delta: 0.05,
            mean_degree: 4,
            grid_n: 25,
            fit_region: Some(validity.clone()),
            stride: 3,
            grid_search: false,
            mean_fit: MeanFit::Grid,
        },
        synthesis: SynthesisConfig { validity_box: Some(validity.clone()), zeta: 0.1, ..SynthesisConfig::default() },
        sim: SimConfig { sample_box: Some(validity), ..SimConfig::default() },
        plot: PlotConfig { grid: 200, half_width: 8.0, slices: vec![] },
        out: None,
        seed: 1,
    }
}

/// Three-dimensional system with three unsafe balls.
pub fn example2() -> RunConfig {
    let validity = Region::new(vec![-1.0, -3.0, -3.0], vec![1.0, 3.0, 3.0]);
    RunConfig {
        system: SystemSpec {
            n: 3,
            m: 3,
            f: strings(&[
                "-x1^2-cos(x1^2)*sin(x1)",
                "-x2-x1^3*x2",
                "-x1^2*x3+1-sqrt(abs(exp(x1)*cos(x1)))",
            ]),
            g: identity(3),
            d: strings(&["0.05*x2^2", "0", "0.05*x1^2"]),
            sigma_n: 0.01,
            markers: vec![
                Marker { component: 1, expr: "cos(x1^2)*sin(x1)".into(), k: 4, interval: [-5.0, 5.0], c_m: None, rho: None },
                Marker {
                    component: 3,
                    expr: "sqrt(abs(exp(x1)*cos(x1)))".into(),
                    k: 4,
                    interval: [-5.0, 5.0],
                    c_m: None,
                    rho: None,
                },
            ],
            unsafe_regions: strings(&[
                "(x1+4)^2+(x2+4)^2+(x3-4)^2-4",
                "x1^2+(x2-4)^2+x3^2-4",
                "(x1-4)^2+x2^2+(x3+4)^2-6",
            ]),
        },
        data: DataConfig {
            train: vec![
                vec![-0.1, 0.1, 0.1],
                vec![0.9, 2.5, 2.5],
                vec![0.9, 2.5, -2.5],
                vec![0.9, -2.5, 2.5],
                vec![0.9, -2.5, -2.5],
                vec![-0.9, 2.5, 2.5],
                vec![-0.9, 2.5, -2.5],
                vec![-0.9, -2.5, 2.5],
                vec![-0.9, -2.5, -2.5],
            ],
            validation: vec![vec![-0.1, -0.2, 0.1], vec![0.5, -1.5, 1.5]],
            horizon: 30.0,
            dt: 0.05,
            controller: strings(&["-2*x1", "-2*x2", "-2*x3"]),
        },
        learn: LearnConfig {
            sigma_f: 0.1,
            lengthscale: 0.2,
            components: vec![1, 3],
            k_delta: 2.0,
            delta: 0.05,
            mean_degree: 4,
            grid_n: 15,
            fit_region: Some(validity.clone()),
            stride: 3,
            grid_search: false,
            mean_fit: MeanFit::Data,
        },
        synthesis: SynthesisConfig { validity_box: Some(validity.clone()), zeta: 0.1, ..SynthesisConfig::default() },
        sim: SimConfig { sample_box: Some(validity), ..SimConfig::default() },
        plot: PlotConfig { grid: 60, half_width: 8.0, slices: vec![-1.0, 0.0, 1.0] },
        out: None,
        seed: 2,
    }
}
