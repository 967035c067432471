//! JSON run configuration merged with command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use confill_core::confill::ConFillConfig;
use confill_core::denoiser::TrainConfig;
use confill_core::{FeatureConfig, ScheduleConfig};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "CONFILL_SEED";

/// File locations; any of them may come from the config file or a flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub gamma: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub raw: Option<PathBuf>,
    pub external: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; overridden by `--seed` and then by the environment.
    pub seed: Option<u64>,
    pub features: FeatureConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub confill: ConFillConfig,
    pub paths: Paths,
}

/// Failure attributable to the command line itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Resolve the seed (flag, then environment, then file, then 0) and push
    /// an explicitly chosen seed into the component configs.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| UsageError(format!("{SEED_ENV} must be an unsigned integer, got '{v}'")))?,
            ),
            Err(_) => None,
        };
        let chosen = flag.or(env).or(self.seed);
        if let Some(s) = chosen {
            self.seed = Some(s);
            self.train.seed = s;
            self.confill.seed = s;
        }
        Ok(chosen.unwrap_or(0))
    }

    /// Check every component invariant.
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.schedule.build()?;
        self.train.validate()?;
        self.confill.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// The path from a flag, else from the config, else a usage error.
pub fn required(flag: &Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| UsageError(format!("missing --{name} (flag or paths.{name} in the config)")).into())
}
