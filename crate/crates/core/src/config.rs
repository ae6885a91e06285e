//! Run configuration: one JSON file, optionally overridden by CLI flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Interpolation;
use crate::fsio;
use crate::model::TrainConfig;
use crate::synth::SynthConfig;

/// Independent switches for the three training/inference additions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub pruning: bool,
    pub plausibility: bool,
    pub preposition: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            pruning: true,
            plausibility: true,
            preposition: true,
        }
    }
}

impl Toggles {
    pub const BASELINE: Toggles = Toggles {
        pruning: false,
        plausibility: false,
        preposition: false,
    };

    /// All eight combinations.
    pub fn all() -> impl Iterator<Item = Toggles> {
        (0..8u8).map(|b| Toggles {
            pruning: b & 1 != 0,
            plausibility: b & 2 != 0,
            preposition: b & 4 != 0,
        })
    }
}

/// File locations. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verbs: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objects: Option<PathBuf>,
    /// Defaults to the built-in 32-entry list.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prepositions: Option<PathBuf>,
    /// Defaults to the built-in person synonym list.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synonyms: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Base directory for map and feature sidecars; defaults to each dataset's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maps_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub captions: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triplets: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pruned: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distributions: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub toggles: Toggles,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub interpolation: Interpolation,
    /// Write one `recall,precision` CSV per class next to the report.
    #[serde(default)]
    pub write_curves: bool,
    #[serde(skip)]
    pub base: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.train.seed = cfg.seed;
        cfg.synth.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fsio::read_to_string(path)?, path)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.synth.seed = seed;
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Resolved path for a required entry, or a config error naming it.
    pub fn require(&self, name: &str, p: &Option<PathBuf>) -> Result<PathBuf> {
        p.as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Config(format!("paths.{name} is required")))
    }

    pub fn optional(&self, p: &Option<PathBuf>) -> Option<PathBuf> {
        p.as_deref().map(|p| self.resolve(p))
    }
}
