use std::path::{Path, PathBuf};

use roa_core::dynamics::SystemSpec;
use roa_core::learn::LearnConfig;
use roa_core::sim::SimConfig;
use roa_core::synthesis::SynthesisConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Measurement campaign used for learning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Initial states of the training trajectories.
    pub train: Vec<Vec<f64>>,
    /// Initial states of the validation trajectories.
    #[serde(default)]
    pub validation: Vec<Vec<f64>>,
    pub horizon: f64,
    pub dt: f64,
    /// Feedback applied while collecting data, one polynomial per input.
    /// Empty means open loop.
    #[serde(default)]
    pub controller: Vec<String>,
}

/// Grid settings for `export-plot`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotConfig {
    pub grid: usize,
    /// Half-width of the plotting box, centred at the origin.
    pub half_width: f64,
    /// `x3` values of the slice grids for 3-D systems.
    pub slices: Vec<f64>,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig { grid: 200, half_width: 8.0, slices: vec![0.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub data: DataConfig,
    pub learn: LearnConfig,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub plot: PlotConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Checks that need more than the schema.
    pub fn validate(&self) -> Result<(), CliError> {
        let n = self.system.n;
        let bad = |m: String| Err(CliError::Config(m));
        if self.data.train.is_empty() {
            return bad("data.train needs at least one start point".into());
        }
        for (name, starts) in [("train", &self.data.train), ("validation", &self.data.validation)] {
            if let Some(x) = starts.iter().find(|x| x.len() != n) {
                return bad(format!("data.{name}: start {x:?} does not have {n} entries"));
            }
        }
        if !(self.data.dt > 0.0) || !(self.data.horizon >= self.data.dt) {
            return bad("data: need dt > 0 and horizon >= dt".into());
        }
        if !self.data.controller.is_empty() && self.data.controller.len() != self.system.m {
            return bad(format!("data.controller needs {} entries", self.system.m));
        }
        self.synthesis.validate().map_err(|e| CliError::Config(format!("synthesis: {e}")))?;
        self.sim.validate().map_err(|e| CliError::Config(format!("sim: {e}")))?;
        for (name, region) in [("synthesis.validity_box", &self.synthesis.validity_box), ("sim.sample_box", &self.sim.sample_box)] {
            if let Some(r) = region {
                if r.nvars() != n || r.hi.len() != n {
                    return bad(format!("{name} must have {n} coordinates"));
                }
            }
        }
        if self.synthesis.validity_box.is_none() && self.sim.sample_box.is_none() {
            return bad("one of synthesis.validity_box or sim.sample_box is required".into());
        }
        if n == 3 && self.plot.slices.is_empty() {
            return bad("plot.slices must list at least one x3 value".into());
        }
        Ok(())
    }
}
