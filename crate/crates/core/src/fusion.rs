//! The fused classifier: both backbones are tapped at four resolutions, the
//! taps are merged per stage, the three finer stages are reduced to the
//! coarsest resolution by conv blocks, and everything is concatenated ahead
//! of a two-layer head.

use std::path::Path;

use cxrfuse_nn::{BatchNorm2d, Conv2d, Linear, Mode, Param, ParamInit, Parameters, Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::backbones::{load_pretrained, Backbone, BackboneConfig, BackboneKind, ChannelScale, WeightArchive};
use crate::error::{config, Error, Result};
use crate::model::{save_model, ModelSpec, Network};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Channel concatenation of the two taps.
    #[default]
    ConcatChannels,
    /// 1x1 projection of the DenseNet tap to the ResNet width, then addition.
    ProjectAdd,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" | "concat_channels" => Ok(FusionMode::ConcatChannels),
            "project_add" | "add" => Ok(FusionMode::ProjectAdd),
            _ => config(format!("unknown fusion mode {s:?} (expected concat_channels or project_add)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionModelConfig {
    pub backbone_scale: ChannelScale,
    pub input_size: usize,
    pub num_classes: usize,
    pub fusion_mode: FusionMode,
    /// Width of every conv-block stage before `backbone_scale` is applied.
    pub conv_block_channels: usize,
    pub head_hidden: usize,
    pub pretrained: bool,
    pub l2_coefficient: f64,
}

impl Default for FusionModelConfig {
    fn default() -> Self {
        FusionModelConfig {
            backbone_scale: ChannelScale::FULL,
            input_size: 224,
            num_classes: 4,
            fusion_mode: FusionMode::ConcatChannels,
            conv_block_channels: 512,
            head_hidden: 512,
            pretrained: false,
            l2_coefficient: 1e-4,
        }
    }
}

impl FusionModelConfig {
    /// 64 px input with 1/8 of every width.
    pub fn tiny(num_classes: usize) -> Self {
        FusionModelConfig {
            backbone_scale: ChannelScale::new(1, 8).expect("valid scale"),
            input_size: 64,
            num_classes,
            ..Default::default()
        }
    }

    pub fn backbone_config(&self, kind: BackboneKind) -> BackboneConfig {
        BackboneConfig {
            kind,
            input_size: self.input_size,
            channel_scale: self.backbone_scale,
            pretrained: self.pretrained,
        }
    }

    /// Conv-block width after scaling.
    pub fn block_channels(&self) -> Result<usize> {
        self.backbone_scale.apply(self.conv_block_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return config(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.conv_block_channels == 0 || self.head_hidden == 0 {
            return config("conv_block_channels and head_hidden must be positive");
        }
        if !(self.l2_coefficient >= 0.0 && self.l2_coefficient.is_finite()) {
            return config(format!("l2_coefficient must be a nonnegative number, got {}", self.l2_coefficient));
        }
        self.block_channels()?;
        self.backbone_config(BackboneKind::Resnet50).validate()?;
        self.backbone_config(BackboneKind::Densenet121).validate()
    }

    /// Channel count of each fused tap.
    pub fn fused_channels(&self) -> Result<[usize; 4]> {
        let res = self.backbone_config(BackboneKind::Resnet50).tap_shapes()?;
        let des = self.backbone_config(BackboneKind::Densenet121).tap_shapes()?;
        Ok(std::array::from_fn(|k| match self.fusion_mode {
            FusionMode::ConcatChannels => res[k].channels + des[k].channels,
            FusionMode::ProjectAdd => res[k].channels,
        }))
    }

    /// Channel count of the global concatenation: three conv blocks plus the last fused tap.
    pub fn global_channels(&self) -> Result<usize> {
        Ok(3 * self.block_channels()? + self.fused_channels()?[3])
    }
}

/// Merges one pair of same-resolution taps.
pub fn fuse_stage<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    res_tap: Var,
    des_tap: Var,
    mode: FusionMode,
    projection: Option<&'a Conv2d<T>>,
) -> Result<Var> {
    let (_, _, rh, rw) = tape.value(res_tap).dims4()?;
    let (_, _, dh, dw) = tape.value(des_tap).dims4()?;
    if (rh, rw) != (dh, dw) {
        return Err(Error::Shape(format!("cannot fuse taps of size {rh}x{rw} and {dh}x{dw}")));
    }
    match mode {
        FusionMode::ConcatChannels => Ok(tape.concat(&[res_tap, des_tap])?),
        FusionMode::ProjectAdd => {
            let proj = projection.ok_or_else(|| Error::Config("project_add fusion needs projection weights".into()))?;
            let p = proj.forward(tape, des_tap)?;
            Ok(tape.add(p, res_tap)?)
        }
    }
}

/// One reduction stage: 3x3 conv, batch norm, ReLU, 2x2 average pool.
#[derive(Clone, Debug)]
pub struct ConvStage<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

/// Repeated [`ConvStage`]s halving the resolution down to a target size.
#[derive(Clone, Debug)]
pub struct ConvBlock<T> {
    pub stages: Vec<ConvStage<T>>,
}

/// Builds a block that reduces `input_spatial` to `target_spatial`; the
/// ratio must be `2^n` with `n >= 1`.
pub fn build_conv_block<T: Scalar>(
    init: &mut ParamInit,
    name: &str,
    in_channels: usize,
    input_spatial: usize,
    target_spatial: usize,
    out_channels: usize,
) -> Result<ConvBlock<T>> {
    let ratio = (target_spatial > 0 && input_spatial % target_spatial == 0).then(|| input_spatial / target_spatial);
    let n = match ratio {
        Some(r) if r >= 2 && r.is_power_of_two() => r.trailing_zeros() as usize,
        _ => {
            return config(format!(
                "conv block input {input_spatial} is not a power-of-two multiple of {target_spatial}"
            ))
        }
    };
    let mut stages = Vec::with_capacity(n);
    let mut cin = in_channels;
    for i in 0..n {
        stages.push(ConvStage {
            conv: Conv2d::new(init, &format!("{name}.{i}.conv"), cin, out_channels, 3, 1, 1, false),
            bn: BatchNorm2d::new(init, &format!("{name}.{i}.bn"), out_channels),
        });
        cin = out_channels;
    }
    Ok(ConvBlock { stages })
}

impl<T: Scalar> ConvBlock<T> {
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, mut x: Var, mode: Mode) -> Result<Var> {
        for s in &self.stages {
            x = s.conv.forward(tape, x)?;
            x = s.bn.forward(tape, x, mode)?;
            x = tape.relu(x);
            x = tape.avg_pool2d(x, 2)?;
        }
        Ok(x)
    }
}

impl<T: Scalar> Parameters<T> for ConvBlock<T> {
    fn visit<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>)) {
        for s in &self.stages {
            s.conv.visit(f);
            s.bn.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for s in &mut self.stages {
            s.conv.visit_mut(f);
            s.bn.visit_mut(f);
        }
    }
}

/// Every named intermediate of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct FusionActivations {
    pub res_taps: [Var; 4],
    pub des_taps: [Var; 4],
    pub fused: [Var; 4],
    pub conv_a: Var,
    pub conv_b: Var,
    pub conv_c: Var,
    pub a_concat: Var,
    pub b_concat: Var,
    pub global_concat: Var,
    pub logits: Var,
    pub probs: Var,
}

#[derive(Clone, Debug)]
pub struct FusionModel<T = f32> {
    config: FusionModelConfig,
    pub resnet: Backbone<T>,
    pub densenet: Backbone<T>,
    /// One 1x1 projection per stage in `project_add` mode, empty otherwise.
    pub projections: Vec<Conv2d<T>>,
    /// Reduction stacks A, B, C for fused taps 1-3.
    pub conv_blocks: Vec<ConvBlock<T>>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

/// Builds a randomly initialized fusion model.
pub fn build_fusion_model<T: Scalar>(config: &FusionModelConfig, seed: u64) -> Result<FusionModel<T>> {
    FusionModel::new(config, seed)
}

impl<T: Scalar> FusionModel<T> {
    pub fn new(config: &FusionModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = ParamInit::new(seed);
        let rc = config.backbone_config(BackboneKind::Resnet50);
        let resnet = Backbone::new(&rc, &mut init, "resnet")?;
        let densenet = Backbone::new(&config.backbone_config(BackboneKind::Densenet121), &mut init, "densenet")?;
        let res_ch = resnet.tap_channels();
        let des_ch = densenet.tap_channels();
        let projections = match config.fusion_mode {
            FusionMode::ConcatChannels => Vec::new(),
            FusionMode::ProjectAdd => (0..4)
                .map(|k| Conv2d::new(&mut init, &format!("fusion.proj{}", k + 1), des_ch[k], res_ch[k], 1, 1, 0, false))
                .collect(),
        };
        let fused = config.fused_channels()?;
        let shapes = rc.tap_shapes()?;
        let target = shapes[3].height;
        let width = config.block_channels()?;
        let conv_blocks = ["conv_block_a", "conv_block_b", "conv_block_c"]
            .iter()
            .enumerate()
            .map(|(k, name)| build_conv_block(&mut init, name, fused[k], shapes[k].height, target, width))
            .collect::<Result<Vec<_>>>()?;
        let fc1 = Linear::new(&mut init, "head.fc1", config.global_channels()?, config.head_hidden);
        let fc2 = Linear::new(&mut init, "head.fc2", config.head_hidden, config.num_classes);
        Ok(FusionModel {
            config: config.clone(),
            resnet,
            densenet,
            projections,
            conv_blocks,
            fc1,
            fc2,
        })
    }

    pub fn config(&self) -> &FusionModelConfig {
        &self.config
    }

    /// Loads converted ImageNet weights into both backbones.
    pub fn load_pretrained_backbones(&mut self, resnet: &WeightArchive, densenet: &WeightArchive) -> Result<(usize, usize)> {
        Ok((load_pretrained(&mut self.resnet, resnet)?, load_pretrained(&mut self.densenet, densenet)?))
    }

    pub fn forward_detailed<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, mode: Mode) -> Result<FusionActivations> {
        let res_taps = self.resnet.forward_taps(tape, x, mode)?;
        let des_taps = self.densenet.forward_taps(tape, x, mode)?;
        let mut fused = res_taps;
        for k in 0..4 {
            fused[k] = fuse_stage(tape, res_taps[k], des_taps[k], self.config.fusion_mode, self.projections.get(k))?;
        }
        let conv_a = self.conv_blocks[0].forward(tape, fused[0], mode)?;
        let conv_b = self.conv_blocks[1].forward(tape, fused[1], mode)?;
        let conv_c = self.conv_blocks[2].forward(tape, fused[2], mode)?;
        let a_concat = tape.concat(&[conv_a, conv_b])?;
        let b_concat = tape.concat(&[conv_c, fused[3]])?;
        let global_concat = tape.concat(&[a_concat, b_concat])?;
        let pooled = tape.global_avg_pool(global_concat)?;
        let hidden = self.fc1.forward(tape, pooled)?;
        let hidden = tape.relu(hidden);
        let logits = self.fc2.forward(tape, hidden)?;
        let probs = tape.softmax(logits)?;
        Ok(FusionActivations {
            res_taps,
            des_taps,
            fused,
            conv_a,
            conv_b,
            conv_c,
            a_concat,
            b_concat,
            global_concat,
            logits,
            probs,
        })
    }

    /// Inference-mode class probabilities for an `(n, 3, s, s)` batch.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.predict(batch)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_model(dir, &ModelSpec::Fusion(self.config.clone()), self)
    }
}

impl FusionModel<f32> {
    pub fn load(dir: &Path) -> Result<Self> {
        match crate::model::AnyModel::load(dir)? {
            crate::model::AnyModel::Fusion(m) => Ok(m),
            crate::model::AnyModel::Baseline(_) => config(format!("{} holds a baseline model", dir.display())),
        }
    }
}

impl<T: Scalar> Network<T> for FusionModel<T> {
    fn input_size(&self) -> usize {
        self.config.input_size
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn forward_probs<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, mode: Mode) -> Result<Var> {
        Ok(self.forward_detailed(tape, x, mode)?.probs)
    }

    fn visit_backbones<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>)) {
        self.resnet.visit(f);
        self.densenet.visit(f);
    }
}

impl<T: Scalar> Parameters<T> for FusionModel<T> {
    fn visit<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>)) {
        self.resnet.visit(f);
        self.densenet.visit(f);
        self.projections.visit(f);
        self.conv_blocks.visit(f);
        self.fc1.visit(f);
        self.fc2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.resnet.visit_mut(f);
        self.densenet.visit_mut(f);
        self.projections.visit_mut(f);
        self.conv_blocks.visit_mut(f);
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}
