//! ResNet-50 and DenseNet-121 feature extractors with four stage taps.

mod archive;
mod classifier;
mod densenet;
mod resnet;

use std::fmt;
use std::str::FromStr;

use cxrfuse_nn::{Mode, Param, ParamInit, Parameters, Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

pub use archive::{load_params, load_pretrained, ArchiveEntry, WeightArchive};
pub use classifier::{backbone_classifier, BackboneClassifier};
pub use densenet::{DenseLayer, DenseNet};
pub use resnet::{Bottleneck, ResNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Resnet50,
    Densenet121,
}

impl BackboneKind {
    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::Resnet50 => "resnet50",
            BackboneKind::Densenet121 => "densenet121",
        }
    }

    /// Full-scale channel count of each tap.
    pub fn tap_channels(self) -> [usize; 4] {
        match self {
            BackboneKind::Resnet50 => [256, 512, 1024, 2048],
            BackboneKind::Densenet121 => [256, 512, 1024, 1024],
        }
    }

    /// Every channel width the architecture instantiates at full scale.
    /// Each must stay integral after scaling.
    fn base_widths(self) -> &'static [usize] {
        match self {
            BackboneKind::Resnet50 => &[64, 128, 256, 512],
            // stem, growth rate, bottleneck width
            BackboneKind::Densenet121 => &[64, 32, 128],
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "resnet50" => Ok(BackboneKind::Resnet50),
            "densenet121" => Ok(BackboneKind::Densenet121),
            _ => config(format!("unknown backbone {s:?} (expected resnet50 or densenet121)")),
        }
    }
}

/// Width multiplier `num/den` in (0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelScale {
    num: usize,
    den: usize,
}

impl ChannelScale {
    pub const FULL: ChannelScale = ChannelScale { num: 1, den: 1 };

    pub fn new(num: usize, den: usize) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return config(format!("channel scale {num}/{den} must lie in (0, 1]"));
        }
        Ok(ChannelScale { num, den })
    }

    pub fn is_full(self) -> bool {
        self.num == self.den
    }

    /// Scales a full-size width, failing unless the result is a positive integer.
    pub fn apply(self, width: usize) -> Result<usize> {
        let scaled = width * self.num;
        if scaled % self.den != 0 || scaled / self.den == 0 {
            return config(format!("channel scale {self} turns width {width} into a non-integer"));
        }
        Ok(scaled / self.den)
    }
}

impl Default for ChannelScale {
    fn default() -> Self {
        ChannelScale::FULL
    }
}

impl fmt::Display for ChannelScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for ChannelScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("invalid channel scale {s:?}")))
        };
        match s.split_once('/') {
            Some((n, d)) => ChannelScale::new(parse(n)?, parse(d)?),
            None => ChannelScale::new(parse(s)?, 1),
        }
    }
}

impl Serialize for ChannelScale {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ChannelScale {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) => ChannelScale::new(n, 1),
            Raw::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub input_size: usize,
    pub channel_scale: ChannelScale,
    pub pretrained: bool,
}

impl BackboneConfig {
    pub fn new(kind: BackboneKind) -> Self {
        BackboneConfig {
            kind,
            input_size: 224,
            channel_scale: ChannelScale::FULL,
            pretrained: false,
        }
    }

    /// Small configuration for fast tests: 64 px input, 1/8 of the widths.
    pub fn tiny(kind: BackboneKind) -> Self {
        BackboneConfig {
            kind,
            input_size: 64,
            channel_scale: ChannelScale { num: 1, den: 8 },
            pretrained: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return config(format!("input size {} is not a positive multiple of 32", self.input_size));
        }
        for &w in self.kind.base_widths() {
            self.channel_scale.apply(w)?;
        }
        if self.pretrained && !self.channel_scale.is_full() {
            return config("pretrained weights require channel scale 1");
        }
        Ok(())
    }

    /// Expected `(height, width, channels)` of the four taps.
    pub fn tap_shapes(&self) -> Result<[TapShape; 4]> {
        self.validate()?;
        let channels = self.kind.tap_channels();
        let mut out = [TapShape::default(); 4];
        for (k, shape) in out.iter_mut().enumerate() {
            let side = self.input_size >> (k + 2);
            *shape = TapShape {
                height: side,
                width: side,
                channels: self.channel_scale.apply(channels[k])?,
            };
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TapShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl TapShape {
    /// Shape of sample 0 of an NCHW tensor.
    pub fn of<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (_, c, h, w) = t.dims4()?;
        Ok(TapShape {
            height: h,
            width: w,
            channels: c,
        })
    }
}

impl fmt::Display for TapShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.height, self.width, self.channels)
    }
}

/// The four stage outputs of one backbone forward pass.
#[derive(Clone, Debug)]
pub struct StageTaps<T> {
    pub taps: [Tensor<T>; 4],
}

impl<T: Scalar> StageTaps<T> {
    pub fn shapes(&self) -> Result<[TapShape; 4]> {
        let mut out = [TapShape::default(); 4];
        for (o, t) in out.iter_mut().zip(&self.taps) {
            *o = TapShape::of(t)?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub enum Backbone<T> {
    ResNet(ResNet<T>),
    DenseNet(DenseNet<T>),
}

/// Builds a backbone with standalone (unprefixed) parameter names.
pub fn build_backbone<T: Scalar>(config: &BackboneConfig, seed: u64) -> Result<Backbone<T>> {
    Backbone::new(config, &mut ParamInit::new(seed), "")
}

impl<T: Scalar> Backbone<T> {
    /// Builds a backbone whose parameter names start with `prefix`.
    pub fn new(config: &BackboneConfig, init: &mut ParamInit, prefix: &str) -> Result<Self> {
        config.validate()?;
        Ok(match config.kind {
            BackboneKind::Resnet50 => Backbone::ResNet(ResNet::new(config.clone(), init, prefix)?),
            BackboneKind::Densenet121 => Backbone::DenseNet(DenseNet::new(config.clone(), init, prefix)?),
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        match self {
            Backbone::ResNet(m) => &m.config,
            Backbone::DenseNet(m) => &m.config,
        }
    }

    pub fn kind(&self) -> BackboneKind {
        self.config().kind
    }

    /// Prefix prepended to canonical tensor names (empty when standalone).
    pub fn prefix(&self) -> &str {
        match self {
            Backbone::ResNet(m) => &m.prefix,
            Backbone::DenseNet(m) => &m.prefix,
        }
    }

    pub fn tap_channels(&self) -> [usize; 4] {
        self.config().tap_shapes().expect("validated at construction").map(|s| s.channels)
    }

    pub fn forward_taps<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, mode: Mode) -> Result<[Var; 4]> {
        match self {
            Backbone::ResNet(m) => m.forward_taps(tape, x, mode),
            Backbone::DenseNet(m) => m.forward_taps(tape, x, mode),
        }
    }

    /// Inference-mode taps for an NCHW batch.
    pub fn taps(&self, input: &Tensor<T>) -> Result<StageTaps<T>> {
        let mut tape = Tape::inference();
        let x = tape.input(input.clone());
        let vars = self.forward_taps(&mut tape, x, Mode::Eval)?;
        Ok(StageTaps {
            taps: vars.map(|v| tape.value(v).clone()),
        })
    }
}

impl<T: Scalar> Parameters<T> for Backbone<T> {
    fn visit<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>)) {
        match self {
            Backbone::ResNet(m) => m.visit(f),
            Backbone::DenseNet(m) => m.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match self {
            Backbone::ResNet(m) => m.visit_mut(f),
            Backbone::DenseNet(m) => m.visit_mut(f),
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_parses_and_rejects_fractional_widths() {
        let s: ChannelScale = "1/8".parse().unwrap();
        assert_eq!(s.apply(64).unwrap(), 8);
        assert!("3/7".parse::<ChannelScale>().unwrap().apply(64).is_err());
        assert!("0/4".parse::<ChannelScale>().is_err());
        assert!("5/4".parse::<ChannelScale>().is_err());
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "\"1/8\"");
        assert_eq!(serde_json::from_str::<ChannelScale>("1").unwrap(), ChannelScale::FULL);
    }

    #[test]
    fn config_validation() {
        let mut c = BackboneConfig::new(BackboneKind::Resnet50);
        c.input_size = 200;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = BackboneConfig::tiny(BackboneKind::Densenet121);
        c.pretrained = true;
        assert!(c.validate().is_err());
        let mut c = BackboneConfig::new(BackboneKind::Densenet121);
        c.channel_scale = ChannelScale::new(1, 64).unwrap();
        // growth rate 32 cannot be scaled by 1/64
        assert!(c.validate().is_err());
    }

    #[test]
    fn expected_tap_shapes() {
        let full = BackboneConfig::new(BackboneKind::Resnet50).tap_shapes().unwrap();
        let got: Vec<_> = full.iter().map(|s| (s.height, s.width, s.channels)).collect();
        assert_eq!(got, vec![(56, 56, 256), (28, 28, 512), (14, 14, 1024), (7, 7, 2048)]);
        let tiny = BackboneConfig::tiny(BackboneKind::Resnet50).tap_shapes().unwrap();
        let got: Vec<_> = tiny.iter().map(|s| (s.height, s.width, s.channels)).collect();
        assert_eq!(got, vec![(16, 16, 32), (8, 8, 64), (4, 4, 128), (2, 2, 256)]);
    }
}
