//! Run configuration: one TOML document with a section per subsystem.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::biped::BipedModel;
use crate::error::{Error, Result};
use crate::rollout::{ControllerConfig, EpisodeConfig, PeriodicityCriteria, RewardWeights, RolloutSetup};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "run".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: BipedModel,
    pub controller: ControllerConfig,
    pub episode: EpisodeConfig,
    pub reward: RewardWeights,
    pub gait: PeriodicityCriteria,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

/// A configuration problem with the source line it refers to, when known.
#[derive(Debug)]
pub struct ConfigDiagnostic {
    pub line: Option<usize>,
    pub error: Error,
}

impl std::fmt::Display for ConfigDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.error),
            None => write!(f, "{}", self.error),
        }
    }
}

impl std::error::Error for ConfigDiagnostic {}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.controller.validate()?;
        self.episode.validate()?;
        self.reward.validate()?;
        self.gait.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Parses and validates `text`. Errors carry the offending line.
    pub fn from_toml(text: &str) -> std::result::Result<Self, ConfigDiagnostic> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigDiagnostic {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            error: Error::Parse(e.message().to_string()),
        })?;
        cfg.validate().map_err(|error| {
            let line = match &error {
                Error::InvalidConfig { field, .. } => locate_key(text, field),
                _ => None,
            };
            ConfigDiagnostic { line, error }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> std::result::Result<Self, ConfigDiagnostic> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigDiagnostic {
            line: None,
            error: Error::Io(e),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// SHA-256 over every setting that changes the optimization trajectory.
    /// The iteration budget, worker count and output location are excluded so
    /// a run can be resumed with a larger budget or elsewhere.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.train.iterations = 0;
        c.train.workers = None;
        c.output = OutputConfig::default();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn rollout_setup(&self) -> RolloutSetup {
        RolloutSetup {
            model: self.model.clone(),
            controller: self.controller.clone(),
            episode: self.episode.clone(),
            reward: self.reward,
            overrides: None,
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the assignment to dotted `field`, or of its table header if the
/// key itself is absent.
pub fn locate_key(text: &str, field: &str) -> Option<usize> {
    let mut table = String::new();
    let mut header_line = None;
    let (parent, _) = field.rsplit_once('.').unwrap_or(("", field));
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.starts_with('[') {
            table = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if table == parent {
                header_line = Some(i + 1);
            }
            continue;
        }
        let Some((key, _)) = line.split_once('=') else {
            continue;
        };
        let key = key.trim().trim_matches('"');
        let full = if table.is_empty() {
            key.to_string()
        } else {
            format!("{table}.{key}")
        };
        if full == field || field.starts_with(&format!("{full}.")) {
            return Some(i + 1);
        }
    }
    header_line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.train.seed = 17;
        c.train.workers = Some(3);
        c.episode.horizon = 40;
        let text = c.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = "[train]\nseed = 1\nsigma = 0.1\n";
        let err = RunConfig::from_toml(text).unwrap_err();
        assert_eq!(err.line, Some(3));
        assert!(err.to_string().contains("sigma"), "{err}");
    }

    #[test]
    fn invalid_value_names_field_and_line() {
        let text = "[episode]\nhorizon = 10\n\n[train]\nseed = 2\nsigma0 = -1.0\n";
        let err = RunConfig::from_toml(text).unwrap_err();
        assert_eq!(err.line, Some(6));
        assert!(err.to_string().contains("train.sigma0"), "{err}");
    }

    #[test]
    fn nested_tables_are_located() {
        let text = "[controller.planner]\nknots_per_phase = 1\n";
        let err = RunConfig::from_toml(text).unwrap_err();
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn hash_ignores_budget_and_workers() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.train.iterations = 500;
        b.train.workers = Some(8);
        b.output.dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.train.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
