//! The TOML run configuration.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use topomod::ensemble::theta_grid;
use topomod::protocol::{CrossvalConfig, SingleMlpConfig};
use topomod::PipelineConfig;

use crate::failure::Failure;

/// Default input and output locations; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// CSV dataset, label in the last column.
    pub data: Option<PathBuf>,
    /// Skip a header row when reading CSV datasets.
    pub header: bool,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed. Replaces `pipeline.seed`.
    pub seed: u64,
    pub folds: usize,
    pub pipeline: PipelineConfig,
    /// Size of the default threshold grid (0.5 up to 0.999).
    pub theta_steps: usize,
    /// Explicit threshold grid; overrides `theta_steps`.
    pub thetas: Option<Vec<f64>>,
    /// k values of the k-NN baseline curve, descending.
    pub ks: Vec<usize>,
    pub single_mlp: SingleMlpConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let cv = CrossvalConfig::default();
        RunConfig {
            seed: 0,
            folds: cv.folds,
            pipeline: cv.pipeline,
            theta_steps: cv.thetas.len(),
            thetas: None,
            ks: cv.ks,
            single_mlp: cv.single_mlp,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {}", path.display(), e.message())).into())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            ..self.pipeline.clone()
        }
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.thetas.clone().unwrap_or_else(|| theta_grid(self.theta_steps))
    }

    pub fn crossval(&self) -> CrossvalConfig {
        CrossvalConfig {
            folds: self.folds,
            seed: self.seed,
            pipeline: self.pipeline(),
            thetas: self.thetas(),
            ks: self.ks.clone(),
            single_mlp: self.single_mlp.clone(),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.crossval().validate().map_err(|e| Failure::config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> anyhow::Result<String> {
        let bytes = serde_json::to_vec(self).context("serializing config")?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }
}
