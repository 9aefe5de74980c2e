//! Experiment configuration.
//!
//! Files are flat `key = value` lines with dotted section prefixes, e.g.
//!
//! ```text
//! seed = 7
//! smc.episodes = 20
//! smc.kernel.eta = 1e-6
//! smc.prior.family = "student_t"
//! smc.prior.dof = 3
//! ```
//!
//! Every key is optional and unknown keys are rejected. The text is parsed as
//! TOML, so `[section]` headers are accepted too.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use prequential::dgfm::NetworkSpec;
use prequential::enkf::EnkfConfig;
use prequential::lorenz96::{L96Params, SimConfig};
use prequential::scoring::ScoreConfig;
use prequential::smc::SmcConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Which observations an episode's diagnostics are computed on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TestRange {
    /// The block of `tau` indices following the assimilated episode.
    #[default]
    NextEpisode,
    /// A fixed block at the start of the test split.
    Holdout,
}

impl TestRange {
    pub fn as_str(self) -> &'static str {
        match self {
            TestRange::NextEpisode => "next-episode",
            TestRange::Holdout => "holdout",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// Predictive draws per evaluated index.
    pub m_pred: usize,
    pub test_range: TestRange,
    /// Length of the holdout block; `None` uses the whole test split.
    pub holdout_len: Option<usize>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            m_pred: 100,
            test_range: TestRange::NextEpisode,
            holdout_len: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("pqda-out") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub lorenz: L96Params,
    pub sim: SimConfig,
    pub network: NetworkSpec,
    pub score: ScoreConfig,
    pub smc: SmcConfig,
    pub enkf: EnkfConfig,
    pub diagnostics: DiagnosticsConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn validate(&self) -> Result<()> {
        self.lorenz.validate()?;
        self.sim.validate()?;
        self.network.validate()?;
        self.score.validate()?;
        self.smc.validate()?;
        self.enkf.validate()?;
        if self.diagnostics.m_pred < 2 {
            return Err(CliError::Config(format!(
                "diagnostics.m_pred = {} must be >= 2",
                self.diagnostics.m_pred
            )));
        }
        if self.diagnostics.holdout_len == Some(0) {
            return Err(CliError::Config("diagnostics.holdout_len must be positive".into()));
        }
        Ok(())
    }

    /// The configuration as sorted `dotted.key = value` lines. Parsing the
    /// result gives back an equal configuration.
    pub fn to_flat(&self) -> String {
        let value = toml::Value::try_from(self).expect("configuration serialises");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines.sort();
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    /// SHA-256 over the flat form with the output directory left out, so
    /// identical experiments written to different places share a hash.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputConfig::default();
        let digest = Sha256::digest(canonical.to_flat().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        leaf => out.push(format!("{prefix} = {leaf}")),
    }
}
