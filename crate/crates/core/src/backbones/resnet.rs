//! ResNet-50 (bottleneck variant with the stride on the 3x3 convolution).

use cxrfuse_nn::{BatchNorm2d, Conv2d, ConvSpec, Mode, Param, ParamInit, Parameters, Scalar, Tape, Var};

use super::{join, BackboneConfig};
use crate::error::Result;

const BLOCKS: [usize; 4] = [3, 4, 6, 3];
const WIDTHS: [usize; 4] = [64, 128, 256, 512];
const EXPANSION: usize = 4;

/// Residual unit `y = relu(F(x) + shortcut(x))` where `F` is
/// 1x1 -> 3x3 -> 1x1 with normalization after each convolution.
#[derive(Clone, Debug)]
pub struct Bottleneck<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub conv3: Conv2d<T>,
    pub bn3: BatchNorm2d<T>,
    /// Projection shortcut when the shape changes; identity otherwise.
    pub downsample: Option<(Conv2d<T>, BatchNorm2d<T>)>,
}

impl<T: Scalar> Bottleneck<T> {
    pub fn new(init: &mut ParamInit, name: &str, in_ch: usize, width: usize, stride: usize) -> Self {
        let out_ch = width * EXPANSION;
        let n = |s: &str| join(name, s);
        let downsample = (stride != 1 || in_ch != out_ch).then(|| {
            (
                Conv2d::new(init, &n("downsample.0"), in_ch, out_ch, 1, stride, 0, false),
                BatchNorm2d::new(init, &n("downsample.1"), out_ch),
            )
        });
        Bottleneck {
            conv1: Conv2d::new(init, &n("conv1"), in_ch, width, 1, 1, 0, false),
            bn1: BatchNorm2d::new(init, &n("bn1"), width),
            conv2: Conv2d::new(init, &n("conv2"), width, width, 3, stride, 1, false),
            bn2: BatchNorm2d::new(init, &n("bn2"), width),
            conv3: Conv2d::new(init, &n("conv3"), width, out_ch, 1, 1, 0, false),
            bn3: BatchNorm2d::new(init, &n("bn3"), out_ch),
            downsample,
        }
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, mode: Mode) -> Result<Var> {
        let mut h = self.conv1.forward(tape, x)?;
        h = self.bn1.forward(tape, h, mode)?;
        h = tape.relu(h);
        h = self.conv2.forward(tape, h)?;
        h = self.bn2.forward(tape, h, mode)?;
        h = tape.relu(h);
        h = self.conv3.forward(tape, h)?;
        h = self.bn3.forward(tape, h, mode)?;
        let shortcut = match &self.downsample {
            Some((conv, bn)) => {
                let s = conv.forward(tape, x)?;
                bn.forward(tape, s, mode)?
            }
            None => x,
        };
        let sum = tape.add(h, shortcut)?;
        Ok(tape.relu(sum))
    }
}

impl<T: Scalar> Parameters<T> for Bottleneck<T> {
    fn visit<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>)) {
        self.conv1.visit(f);
        self.bn1.visit(f);
        self.conv2.visit(f);
        self.bn2.visit(f);
        self.conv3.visit(f);
        self.bn3.visit(f);
        if let Some((c, b)) = &self.downsample {
            c.visit(f);
            b.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv1.visit_mut(f);
        self.bn1.visit_mut(f);
        self.conv2.visit_mut(f);
        self.bn2.visit_mut(f);
        self.conv3.visit_mut(f);
        self.bn3.visit_mut(f);
        if let Some((c, b)) = &mut self.downsample {
            c.visit_mut(f);
            b.visit_mut(f);
        }
    }
}

#[derive(Clone, Debug)]
pub struct ResNet<T> {
    pub(crate) config: BackboneConfig,
    pub(crate) prefix: String,
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    /// `layer1` .. `layer4`; the output of each is one tap.
    pub layers: Vec<Vec<Bottleneck<T>>>,
}

impl<T: Scalar> ResNet<T> {
    pub(crate) fn new(config: BackboneConfig, init: &mut ParamInit, prefix: &str) -> Result<Self> {
        let scale = config.channel_scale;
        let stem = scale.apply(64)?;
        let conv1 = Conv2d::new(init, &join(prefix, "conv1"), 3, stem, 7, 2, 3, false);
        let bn1 = BatchNorm2d::new(init, &join(prefix, "bn1"), stem);
        let mut in_ch = stem;
        let mut layers = Vec::with_capacity(4);
        for (stage, (&blocks, &base)) in BLOCKS.iter().zip(&WIDTHS).enumerate() {
            let width = scale.apply(base)?;
            let mut units = Vec::with_capacity(blocks);
            for i in 0..blocks {
                let stride = if i == 0 && stage > 0 { 2 } else { 1 };
                let name = join(prefix, &format!("layer{}.{i}", stage + 1));
                units.push(Bottleneck::new(init, &name, in_ch, width, stride));
                in_ch = width * EXPANSION;
            }
            layers.push(units);
        }
        Ok(ResNet {
            config,
            prefix: prefix.to_string(),
            conv1,
            bn1,
            layers,
        })
    }

    pub fn forward_taps<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, mode: Mode) -> Result<[Var; 4]> {
        let mut h = self.conv1.forward(tape, x)?;
        h = self.bn1.forward(tape, h, mode)?;
        h = tape.relu(h);
        h = tape.max_pool2d(h, 3, ConvSpec::new(2, 1))?;
        let mut taps = [h; 4];
        for (tap, layer) in taps.iter_mut().zip(&self.layers) {
            for unit in layer {
                h = unit.forward(tape, h, mode)?;
            }
            *tap = h;
        }
        Ok(taps)
    }
}

impl<T: Scalar> Parameters<T> for ResNet<T> {
    fn visit<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>)) {
        self.conv1.visit(f);
        self.bn1.visit(f);
        for layer in &self.layers {
            layer.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv1.visit_mut(f);
        self.bn1.visit_mut(f);
        for layer in &mut self.layers {
            layer.visit_mut(f);
        }
    }
}
