//! The single-document experiment configuration.
//!
//! Every section has defaults, so `{}` is a valid config; unknown keys at any
//! level are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cube::PatchScheme;
use crate::degrade::{DegradeSpec, SynthSpec};
use crate::dictionary::{AnalyticKind, KsvdParams};
use crate::dip::DipConfig;
use crate::error::{Error, Result};
use crate::solver::SolverConfig;
use crate::sparse::Denoiser;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictionaryConfig {
    pub ksvd: KsvdParams,
    /// Use this analytic dictionary instead of learning one.
    pub analytic: Option<AnalyticKind>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub dir: Option<String>,
    pub trace: Option<String>,
    pub report: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub solver: SolverConfig,
    pub degrade: DegradeSpec,
    pub synth: SynthSpec,
    pub patch: PatchScheme,
    pub dictionary: DictionaryConfig,
    pub denoiser: Denoiser,
    pub dip: DipConfig,
    pub runs: usize,
    pub outputs: OutputPaths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            degrade: DegradeSpec::default(),
            synth: SynthSpec::default(),
            patch: PatchScheme::default(),
            dictionary: DictionaryConfig::default(),
            denoiser: Denoiser::default(),
            dip: DipConfig::default(),
            runs: 20,
            outputs: OutputPaths::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.degrade.validate()?;
        self.denoiser.validate()?;
        self.dip.validate()?;
        if self.runs == 0 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
