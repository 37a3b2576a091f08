//! The run configuration file and its seed fan-out.

use std::path::{Path, PathBuf};

use cxrfuse::backbones::WeightArchive;
use cxrfuse::datasets::{Recipe, SourceDirs, SplitOptions};
use cxrfuse::preprocess::{DenoiseMethod, PreprocessConfig};
use cxrfuse::seed::derive_seed;
use cxrfuse::training::TrainConfig;
use cxrfuse::{Error, FusionModelConfig, ModelSpec, PretrainedWeights, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sources {
    pub source1: Option<PathBuf>,
    pub source2: Option<PathBuf>,
    pub source3: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub folds: usize,
    pub train_fraction: f64,
    pub stratified: bool,
}

impl Default for SplitSection {
    fn default() -> Self {
        let d = SplitOptions::default();
        SplitSection {
            folds: d.folds,
            train_fraction: d.train_fraction,
            stratified: d.stratified,
        }
    }
}

impl SplitSection {
    pub fn options(&self) -> SplitOptions {
        SplitOptions {
            folds: self.folds,
            train_fraction: self.train_fraction,
            stratified: self.stratified,
        }
    }
}

/// Directories holding converted ImageNet weight archives.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightPaths {
    pub resnet50: Option<PathBuf>,
    pub densenet121: Option<PathBuf>,
}

/// Everything needed to reproduce a run. Written next to every output as `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Recipe,
    pub sources: Sources,
    pub split: SplitSection,
    pub model: ModelSpec,
    pub weights: WeightPaths,
    /// Filters applied to every image before resizing.
    pub denoise: Vec<DenoiseMethod>,
    /// `train.seed` is overwritten by the value derived from `seed`.
    pub train: TrainConfig,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: Recipe::Dxr4,
            sources: Sources::default(),
            split: SplitSection::default(),
            model: ModelSpec::Fusion(FusionModelConfig::default()),
            weights: WeightPaths::default(),
            denoise: Vec::new(),
            train: TrainConfig::default(),
            output_dir: None,
            seed: 0,
        }
    }
}

/// Independent seeds for each pipeline stage, so that changing one stage
/// never perturbs another's randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubSeeds {
    pub compose: u64,
    pub split: u64,
    pub init: u64,
    pub train: u64,
    pub stub: u64,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::path_io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::read)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, json).map_err(|e| Error::path_io(path, e))
    }

    pub fn seeds(&self) -> SubSeeds {
        let s = |label| derive_seed(self.seed, label);
        SubSeeds {
            compose: s("compose"),
            split: s("split"),
            init: s("init"),
            train: s("train"),
            stub: s("stub"),
        }
    }

    /// Training settings with the derived seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seeds().train,
            ..self.train.clone()
        }
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            input_size: self.model.input_size(),
            denoise: self.denoise.clone(),
        }
    }

    pub fn source_dirs(&self) -> SourceDirs {
        SourceDirs {
            source1: self.sources.source1.clone(),
            source2: self.sources.source2.clone(),
            source3: self.sources.source3.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.split.folds == 0 {
            return Err(Error::Config("split.folds must be at least 1".into()));
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split.train_fraction must lie in (0, 1), got {}",
                self.split.train_fraction
            )));
        }
        if self.model.pretrained() {
            let missing = match &self.model {
                ModelSpec::Fusion(_) => self.weights.resnet50.is_none() || self.weights.densenet121.is_none(),
                ModelSpec::Baseline { backbone, .. } => match backbone.kind {
                    cxrfuse::backbones::BackboneKind::Resnet50 => self.weights.resnet50.is_none(),
                    cxrfuse::backbones::BackboneKind::Densenet121 => self.weights.densenet121.is_none(),
                },
            };
            if missing {
                return Err(Error::Config(
                    "the model is pretrained but weights.resnet50 / weights.densenet121 are not set".into(),
                ));
            }
        }
        Ok(())
    }

    /// Reads the weight archives named in `weights` (only when pretraining is on).
    pub fn pretrained_weights(&self) -> Result<PretrainedWeights> {
        if !self.model.pretrained() {
            return Ok(PretrainedWeights::default());
        }
        let load = |p: &Option<PathBuf>| p.as_deref().map(WeightArchive::load).transpose();
        Ok(PretrainedWeights {
            resnet50: load(&self.weights.resnet50)?,
            densenet121: load(&self.weights.densenet121)?,
        })
    }
}
