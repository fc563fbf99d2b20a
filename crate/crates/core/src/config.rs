//! TOML run configuration. Unknown keys are rejected, and every run writes
//! the resolved configuration (all defaults filled in) next to its outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, Preset};
use crate::fit::FitSpec;
use crate::simulate::{Generator, SimConfig};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

/// Simulation section: either a preset with optional overrides or a full
/// generator description.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<Generator>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prefix: Option<String>,
}

impl SimSection {
    pub fn resolve(&self) -> Result<SimConfig> {
        let mut cfg = match (&self.preset, &self.generator) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either `preset` or `generator`, not both".into()))
            }
            (Some(Preset::Sim1), None) => SimConfig::sim1(),
            (Some(Preset::Sim2), None) => SimConfig::sim2(),
            (None, Some(g)) => SimConfig {
                generator: g.clone(),
                t: self
                    .t
                    .ok_or_else(|| Error::Config("simulation.t is required with a generator".into()))?,
                n_replicates: 1,
                seed: 1,
            },
            (None, None) => return Err(Error::Config("simulation needs `preset` or `generator`".into())),
        };
        if let Some(t) = self.t {
            cfg.t = t;
        }
        if let Some(r) = self.n_replicates {
            cfg.n_replicates = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolved(&self) -> Result<SimSection> {
        let c = self.resolve()?;
        Ok(SimSection {
            preset: None,
            generator: Some(c.generator),
            t: Some(c.t),
            n_replicates: Some(c.n_replicates),
            seed: Some(c.seed),
            prefix: Some(self.prefix()),
        })
    }

    pub fn prefix(&self) -> String {
        self.prefix.clone().unwrap_or_else(|| "sim".into())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Offset removed from every observation before fitting.
    #[serde(default)]
    pub subtract: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentConfig>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes `resolved_config.toml` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }
}
