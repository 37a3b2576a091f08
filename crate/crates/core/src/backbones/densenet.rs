//! DenseNet-121: four dense blocks of 6/12/24/16 layers, growth rate 32,
//! bottleneck width 4x growth, transitions halving channels and resolution.

use cxrfuse_nn::{BatchNorm2d, Conv2d, ConvSpec, Mode, Param, ParamInit, Parameters, Scalar, Tape, Var};

use super::{join, BackboneConfig};
use crate::error::Result;

pub(crate) const BLOCK_LAYERS: [usize; 4] = [6, 12, 24, 16];
const GROWTH: usize = 32;
const BN_SIZE: usize = 4;
const STEM: usize = 64;

/// Composite function BN -> ReLU -> 1x1 conv -> BN -> ReLU -> 3x3 conv
/// producing `growth` new channels from the concatenation of all earlier maps.
#[derive(Clone, Debug)]
pub struct DenseLayer<T> {
    pub norm1: BatchNorm2d<T>,
    pub conv1: Conv2d<T>,
    pub norm2: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
}

impl<T: Scalar> DenseLayer<T> {
    fn new(init: &mut ParamInit, name: &str, in_ch: usize, growth: usize, bottleneck: usize) -> Self {
        let n = |s: &str| join(name, s);
        DenseLayer {
            norm1: BatchNorm2d::new(init, &n("norm1"), in_ch),
            conv1: Conv2d::new(init, &n("conv1"), in_ch, bottleneck, 1, 1, 0, false),
            norm2: BatchNorm2d::new(init, &n("norm2"), bottleneck),
            conv2: Conv2d::new(init, &n("conv2"), bottleneck, growth, 3, 1, 1, false),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels()
    }

    fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, mode: Mode) -> Result<Var> {
        let mut h = self.norm1.forward(tape, x, mode)?;
        h = tape.relu(h);
        h = self.conv1.forward(tape, h)?;
        h = self.norm2.forward(tape, h, mode)?;
        h = tape.relu(h);
        Ok(self.conv2.forward(tape, h)?)
    }
}

impl<T: Scalar> Parameters<T> for DenseLayer<T> {
    fn visit<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>)) {
        self.norm1.visit(f);
        self.conv1.visit(f);
        self.norm2.visit(f);
        self.conv2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.norm1.visit_mut(f);
        self.conv1.visit_mut(f);
        self.norm2.visit_mut(f);
        self.conv2.visit_mut(f);
    }
}

/// BN -> ReLU -> 1x1 conv (halving channels) -> 2x2 average pool.
#[derive(Clone, Debug)]
pub struct Transition<T> {
    pub norm: BatchNorm2d<T>,
    pub conv: Conv2d<T>,
}

impl<T: Scalar> Parameters<T> for Transition<T> {
    fn visit<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>)) {
        self.norm.visit(f);
        self.conv.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.norm.visit_mut(f);
        self.conv.visit_mut(f);
    }
}

#[derive(Clone, Debug)]
pub struct DenseNet<T> {
    pub(crate) config: BackboneConfig,
    pub(crate) prefix: String,
    pub conv0: Conv2d<T>,
    pub norm0: BatchNorm2d<T>,
    pub blocks: Vec<Vec<DenseLayer<T>>>,
    pub transitions: Vec<Transition<T>>,
    pub norm5: BatchNorm2d<T>,
}

impl<T: Scalar> DenseNet<T> {
    pub(crate) fn new(config: BackboneConfig, init: &mut ParamInit, prefix: &str) -> Result<Self> {
        let scale = config.channel_scale;
        let growth = scale.apply(GROWTH)?;
        let bottleneck = scale.apply(BN_SIZE * GROWTH)?;
        let f = |s: &str| join(prefix, &format!("features.{s}"));
        let stem = scale.apply(STEM)?;
        let conv0 = Conv2d::new(init, &f("conv0"), 3, stem, 7, 2, 3, false);
        let norm0 = BatchNorm2d::new(init, &f("norm0"), stem);
        let mut channels = stem;
        let mut blocks = Vec::with_capacity(4);
        let mut transitions = Vec::with_capacity(3);
        for (b, &n_layers) in BLOCK_LAYERS.iter().enumerate() {
            let mut layers = Vec::with_capacity(n_layers);
            for i in 0..n_layers {
                let name = f(&format!("denseblock{}.denselayer{}", b + 1, i + 1));
                layers.push(DenseLayer::new(init, &name, channels + i * growth, growth, bottleneck));
            }
            channels += n_layers * growth;
            blocks.push(layers);
            if b + 1 < BLOCK_LAYERS.len() {
                let name = f(&format!("transition{}", b + 1));
                transitions.push(Transition {
                    norm: BatchNorm2d::new(init, &join(&name, "norm"), channels),
                    conv: Conv2d::new(init, &join(&name, "conv"), channels, channels / 2, 1, 1, 0, false),
                });
                channels /= 2;
            }
        }
        let norm5 = BatchNorm2d::new(init, &f("norm5"), channels);
        Ok(DenseNet {
            config,
            prefix: prefix.to_string(),
            conv0,
            norm0,
            blocks,
            transitions,
            norm5,
        })
    }

    /// Taps are the raw outputs of dense blocks 1-3 and the final
    /// normalized, rectified features of block 4.
    pub fn forward_taps<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, mode: Mode) -> Result<[Var; 4]> {
        let mut h = self.conv0.forward(tape, x)?;
        h = self.norm0.forward(tape, h, mode)?;
        h = tape.relu(h);
        h = tape.max_pool2d(h, 3, ConvSpec::new(2, 1))?;
        let mut taps = [h; 4];
        for (b, block) in self.blocks.iter().enumerate() {
            let mut features = vec![h];
            for layer in block {
                let input = if features.len() == 1 { features[0] } else { tape.concat(&features)? };
                let new = layer.forward(tape, input, mode)?;
                features.push(new);
            }
            h = tape.concat(&features)?;
            if let Some(t) = self.transitions.get(b) {
                taps[b] = h;
                h = t.norm.forward(tape, h, mode)?;
                h = tape.relu(h);
                h = t.conv.forward(tape, h)?;
                h = tape.avg_pool2d(h, 2)?;
            }
        }
        h = self.norm5.forward(tape, h, mode)?;
        taps[3] = tape.relu(h);
        Ok(taps)
    }
}

impl<T: Scalar> Parameters<T> for DenseNet<T> {
    fn visit<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>)) {
        self.conv0.visit(f);
        self.norm0.visit(f);
        for (b, block) in self.blocks.iter().enumerate() {
            block.visit(f);
            if let Some(t) = self.transitions.get(b) {
                t.visit(f);
            }
        }
        self.norm5.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv0.visit_mut(f);
        self.norm0.visit_mut(f);
        for (b, block) in self.blocks.iter_mut().enumerate() {
            block.visit_mut(f);
            if let Some(t) = self.transitions.get_mut(b) {
                t.visit_mut(f);
            }
        }
        self.norm5.visit_mut(f);
    }
}
