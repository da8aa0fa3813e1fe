//! Run configuration: input paths, component settings and the shared seed.
//!
//! Loaded from TOML. Relative paths are resolved against the directory holding the
//! configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use genkb_core::active::EpisodeConfig;
use genkb_core::background::{parse_schema, parse_taxonomy, parse_typemap};
use genkb_core::embed::{EmbeddingModel, TrainConfig};
use genkb_core::guidance::ExpansionConfig;
use genkb_core::predict::PredictConfig;
use genkb_core::{load_kb, Background, KnowledgeBase};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable overriding `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "GENKB_OUTPUT_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub kb: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub typemap: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Written by `train`, read by `predict` and `serve`. Defaults to
    /// `<output_dir>/model.bin`.
    pub model: Option<PathBuf>,
    /// Ground-truth labels for `active` and `eval` when no annotator is interactive.
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub alpha: f64,
    pub delta: usize,
    /// Onset of the non-increasing Δ-precision tail; `delta` when unset.
    pub y_tilde: Option<usize>,
    /// Checkpoints to report; every checkpoint from ℓ that fits when unset.
    pub checkpoints: Option<Vec<u32>>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            delta: 64,
            y_tilde: None,
            checkpoints: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub paths: Paths,
    pub train: TrainConfig,
    pub expansion: ExpansionConfig,
    pub predict: PredictConfig,
    /// Episode settings. Its `seed`, `train` and `expansion` are taken from the
    /// top-level fields.
    pub active: EpisodeConfig,
    pub estimator: EstimatorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            paths: Paths::default(),
            train: TrainConfig::default(),
            expansion: ExpansionConfig::default(),
            predict: PredictConfig::default(),
            active: EpisodeConfig::default(),
            estimator: EstimatorConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads, resolves and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_relative_to(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_relative_to(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [&mut p.kb, &mut p.taxonomy, &mut p.typemap, &mut p.schema, &mut p.model, &mut p.truth] {
            resolve(base, slot);
        }
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    /// Every input path that is set must exist, and component settings must be valid.
    /// The model path is an output of `train` and is checked where it is read.
    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.paths;
        for (name, path) in [
            ("kb", &p.kb),
            ("taxonomy", &p.taxonomy),
            ("typemap", &p.typemap),
            ("schema", &p.schema),
            ("truth", &p.truth),
        ] {
            if let Some(path) = path {
                if !path.is_file() {
                    return Err(CliError::Config(format!("paths.{name}: {} does not exist", path.display())));
                }
            }
        }
        self.train_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.active.thresholds.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.active.weights.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.estimator.alpha > 1.0) || self.estimator.delta == 0 {
            return Err(CliError::Config("estimator needs alpha > 1 and delta ≥ 1".into()));
        }
        Ok(())
    }

    /// Points the seed at every seeded component.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            seed: self.seed,
            train: self.train_config(),
            expansion: self.expansion.clone(),
            ..self.active.clone()
        }
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths.model.clone().unwrap_or_else(|| self.output_dir.join("model.bin"))
    }

    pub fn ensure_output_dir(&self) -> Result<&Path, CliError> {
        fs::create_dir_all(&self.output_dir).map_err(|e| CliError::io(&self.output_dir, e))?;
        Ok(&self.output_dir)
    }

    pub fn load_kb(&self) -> Result<KnowledgeBase, CliError> {
        let path = self.paths.kb.as_ref().ok_or_else(|| CliError::Config("paths.kb is not set".into()))?;
        Ok(load_kb(path)?)
    }

    /// Missing background files stand for empty background knowledge.
    pub fn load_background(&self) -> Result<Background, CliError> {
        let read = |p: &Option<PathBuf>| -> Result<String, CliError> {
            match p {
                Some(path) => fs::read_to_string(path).map_err(|e| CliError::io(path, e)),
                None => Ok(String::new()),
            }
        };
        let bg = Background {
            taxonomy: parse_taxonomy(&read(&self.paths.taxonomy)?)?,
            typemap: parse_typemap(&read(&self.paths.typemap)?)?,
            schema: parse_schema(&read(&self.paths.schema)?)?,
        };
        if bg.schema.is_empty() {
            log::warn!("no schema given; every relation is unconstrained");
        }
        Ok(bg)
    }

    pub fn load_truth(&self) -> Result<Option<KnowledgeBase>, CliError> {
        self.paths.truth.as_ref().map(|p| load_kb(p).map_err(CliError::from)).transpose()
    }

    pub fn load_model(&self) -> Result<EmbeddingModel, CliError> {
        let path = self.model_path();
        if !path.is_file() {
            return Err(CliError::ModelNotFound(format!("{} (run `genkb train` first)", path.display())));
        }
        Ok(EmbeddingModel::load(&path)?)
    }
}
