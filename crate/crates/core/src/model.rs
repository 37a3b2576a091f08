//! Behaviour shared by every trainable classifier, plus on-disk persistence.

use std::path::Path;

use cxrfuse_nn::{Mode, Param, ParamInit, Parameters, Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::backbones::{load_params, load_pretrained, BackboneClassifier, BackboneConfig, BackboneKind, WeightArchive};
use crate::error::{Error, Result};
use crate::fusion::{FusionModel, FusionModelConfig};

/// A network mapping an `(n, 3, s, s)` batch to class probabilities.
pub trait Network<T: Scalar>: Parameters<T> + Sync {
    fn input_size(&self) -> usize;
    fn num_classes(&self) -> usize;

    /// Records the forward pass and returns the `(n, classes)` softmax output.
    fn forward_probs<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, mode: Mode) -> Result<Var>;

    /// Visits the parameters that belong to pretrained-capable backbones,
    /// i.e. the ones held fixed when backbones are frozen.
    fn visit_backbones<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>));

    /// Inference-mode class probabilities.
    fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let n = validate_batch(batch, self.input_size())?;
        if n == 0 {
            return Ok(Tensor::zeros(&[0, self.num_classes()]));
        }
        let mut tape = Tape::inference();
        let x = tape.input(batch.clone());
        let p = self.forward_probs(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(p).clone())
    }
}

/// Checks an input batch and returns its size.
pub fn validate_batch<T: Scalar>(batch: &Tensor<T>, input_size: usize) -> Result<usize> {
    let (n, c, h, w) = batch.dims4()?;
    if c != 3 || h != input_size || w != input_size {
        return Err(Error::Shape(format!(
            "expected batch of shape (n, 3, {input_size}, {input_size}), got {:?}",
            batch.shape()
        )));
    }
    if !batch.all_finite() {
        return Err(Error::Input("input batch contains non-finite values".into()));
    }
    Ok(n)
}

/// Smallest id not used by any parameter of `model`.
pub(crate) fn next_param_id<T: Scalar, M: Parameters<T> + ?Sized>(model: &M) -> u32 {
    let mut next = 0;
    model.visit(&mut |p: &Param<T>| next = next.max(p.id.0 + 1));
    next
}

pub(crate) fn fresh_init<T: Scalar, M: Parameters<T> + ?Sized>(model: &M, seed: u64) -> ParamInit {
    ParamInit::with_first_id(seed, next_param_id(model))
}

/// Architecture description stored next to saved weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "snake_case")]
pub enum ModelSpec {
    Fusion(FusionModelConfig),
    Baseline { backbone: BackboneConfig, num_classes: usize },
}

impl ModelSpec {
    pub fn pretrained(&self) -> bool {
        match self {
            ModelSpec::Fusion(c) => c.pretrained,
            ModelSpec::Baseline { backbone, .. } => backbone.pretrained,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelSpec::Fusion(c) => c.num_classes,
            ModelSpec::Baseline { num_classes, .. } => *num_classes,
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            ModelSpec::Fusion(c) => c.input_size,
            ModelSpec::Baseline { backbone, .. } => backbone.input_size,
        }
    }

    pub fn set_num_classes(&mut self, k: usize) {
        match self {
            ModelSpec::Fusion(c) => c.num_classes = k,
            ModelSpec::Baseline { num_classes, .. } => *num_classes = k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Fusion(c) => c.validate(),
            ModelSpec::Baseline { backbone, num_classes } => {
                backbone.validate()?;
                if *num_classes < 2 {
                    return Err(Error::Config(format!("num_classes must be at least 2, got {num_classes}")));
                }
                Ok(())
            }
        }
    }

    pub fn build(&self, seed: u64) -> Result<AnyModel> {
        Ok(match self {
            ModelSpec::Fusion(c) => AnyModel::Fusion(FusionModel::new(c, seed)?),
            ModelSpec::Baseline { backbone, num_classes } => {
                AnyModel::Baseline(BackboneClassifier::new(backbone, *num_classes, seed)?)
            }
        })
    }
}

/// Converted ImageNet weight archives for the backbones.
#[derive(Clone, Debug, Default)]
pub struct PretrainedWeights {
    pub resnet50: Option<WeightArchive>,
    pub densenet121: Option<WeightArchive>,
}

/// Either kind of trained model, as loaded from disk.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Fusion(FusionModel<f32>),
    Baseline(BackboneClassifier<f32>),
}

impl AnyModel {
    pub fn spec(&self) -> ModelSpec {
        match self {
            AnyModel::Fusion(m) => ModelSpec::Fusion(m.config().clone()),
            AnyModel::Baseline(m) => ModelSpec::Baseline {
                backbone: m.backbone.config().clone(),
                num_classes: m.num_classes(),
            },
        }
    }

    /// Copies converted ImageNet weights into the backbone(s). Returns the
    /// number of tensors loaded.
    pub fn load_pretrained(&mut self, weights: &PretrainedWeights) -> Result<usize> {
        let need = |kind: BackboneKind, a: &Option<WeightArchive>| {
            a.clone()
                .ok_or_else(|| Error::Config(format!("pretrained {} weights are required", kind.name())))
        };
        match self {
            AnyModel::Fusion(m) => {
                let (r, d) = m.load_pretrained_backbones(
                    &need(BackboneKind::Resnet50, &weights.resnet50)?,
                    &need(BackboneKind::Densenet121, &weights.densenet121)?,
                )?;
                Ok(r + d)
            }
            AnyModel::Baseline(m) => {
                let kind = m.backbone.kind();
                let archive = match kind {
                    BackboneKind::Resnet50 => &weights.resnet50,
                    BackboneKind::Densenet121 => &weights.densenet121,
                };
                load_pretrained(&mut m.backbone, &need(kind, archive)?)
            }
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_model(dir, &self.spec(), self)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("config.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::path_io(&path, e))?;
        let spec: ModelSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut model = spec.build(0)?;
        load_params(&mut model, &WeightArchive::load(dir)?, "")?;
        Ok(model)
    }
}

/// Writes `config.json` and the weight archive into `dir`.
pub fn save_model<T: Scalar, M: Parameters<T> + ?Sized>(dir: &Path, spec: &ModelSpec, model: &M) -> Result<()> {
    crate::error::ensure_dir(dir)?;
    WeightArchive::from_params("cxrfuse", model, "").save(dir)?;
    let path = dir.join("config.json");
    let json = serde_json::to_string_pretty(spec)?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::path_io(&path, e))
}

impl Parameters<f32> for AnyModel {
    fn visit<'s>(&'s self, f: &mut dyn FnMut(&'s Param<f32>)) {
        match self {
            AnyModel::Fusion(m) => m.visit(f),
            AnyModel::Baseline(m) => m.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<f32>)) {
        match self {
            AnyModel::Fusion(m) => m.visit_mut(f),
            AnyModel::Baseline(m) => m.visit_mut(f),
        }
    }
}

impl Network<f32> for AnyModel {
    fn input_size(&self) -> usize {
        match self {
            AnyModel::Fusion(m) => m.input_size(),
            AnyModel::Baseline(m) => m.input_size(),
        }
    }

    fn num_classes(&self) -> usize {
        match self {
            AnyModel::Fusion(m) => m.num_classes(),
            AnyModel::Baseline(m) => m.num_classes(),
        }
    }

    fn forward_probs<'a>(&'a self, tape: &mut Tape<'a, f32>, x: Var, mode: Mode) -> Result<Var> {
        match self {
            AnyModel::Fusion(m) => m.forward_probs(tape, x, mode),
            AnyModel::Baseline(m) => m.forward_probs(tape, x, mode),
        }
    }

    fn visit_backbones<'s>(&'s self, f: &mut dyn FnMut(&'s Param<f32>)) {
        match self {
            AnyModel::Fusion(m) => m.visit_backbones(f),
            AnyModel::Baseline(m) => m.visit_backbones(f),
        }
    }
}
