//! Activation heatmaps of named fusion-network layers and the circle
//! agreement check against annotated findings.

mod circle;
mod overlay;

use std::fmt;
use std::str::FromStr;

use cxrfuse_nn::{Mode, Tape, Tensor, Var};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionActivations, FusionModel};
use crate::preprocess::{resize, stack_batch, GrayImage};

pub use circle::{circle_check, read_annotations, CircleAnnotation, CircleCheck};
pub use overlay::{hot, overlay_file_name, overlay_rgb, render_overlay};

/// Layers a heatmap can be taken from. The `newNN` names refer to the fused
/// stages at their full-resolution sizes (56, 28, 14, 7 px for 224 px inputs).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerName {
    #[serde(rename = "new56")]
    New56,
    #[serde(rename = "new28")]
    New28,
    #[serde(rename = "new14")]
    New14,
    #[serde(rename = "new7")]
    New7,
    #[serde(rename = "convA")]
    ConvA,
    #[serde(rename = "convB")]
    ConvB,
    #[serde(rename = "convC")]
    ConvC,
    #[serde(rename = "a_concat")]
    AConcat,
    #[serde(rename = "b_concat")]
    BConcat,
    #[serde(rename = "global_concat")]
    GlobalConcat,
}

impl LayerName {
    pub const ALL: [LayerName; 10] = [
        LayerName::New56,
        LayerName::New28,
        LayerName::New14,
        LayerName::New7,
        LayerName::ConvA,
        LayerName::ConvB,
        LayerName::ConvC,
        LayerName::AConcat,
        LayerName::BConcat,
        LayerName::GlobalConcat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerName::New56 => "new56",
            LayerName::New28 => "new28",
            LayerName::New14 => "new14",
            LayerName::New7 => "new7",
            LayerName::ConvA => "convA",
            LayerName::ConvB => "convB",
            LayerName::ConvC => "convC",
            LayerName::AConcat => "a_concat",
            LayerName::BConcat => "b_concat",
            LayerName::GlobalConcat => "global_concat",
        }
    }

    fn pick(self, acts: &FusionActivations) -> Var {
        match self {
            LayerName::New56 => acts.fused[0],
            LayerName::New28 => acts.fused[1],
            LayerName::New14 => acts.fused[2],
            LayerName::New7 => acts.fused[3],
            LayerName::ConvA => acts.conv_a,
            LayerName::ConvB => acts.conv_b,
            LayerName::ConvC => acts.conv_c,
            LayerName::AConcat => acts.a_concat,
            LayerName::BConcat => acts.b_concat,
            LayerName::GlobalConcat => acts.global_concat,
        }
    }
}

impl fmt::Display for LayerName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerName::ALL.into_iter().find(|l| l.as_str() == s).ok_or_else(|| {
            let valid: Vec<_> = LayerName::ALL.iter().map(|l| l.as_str()).collect();
            Error::Config(format!("unknown layer {s:?}; valid layers: {}", valid.join(", ")))
        })
    }
}

/// Input-sized maps in `[0, 1]` for one image, in [`LayerName::ALL`] order
/// (or the order requested).
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    pub image_id: String,
    pub maps: Vec<(LayerName, GrayImage)>,
}

impl HeatmapStack {
    pub fn get(&self, layer: LayerName) -> Option<&GrayImage> {
        self.maps.iter().find(|(l, _)| *l == layer).map(|(_, m)| m)
    }
}

/// Mean absolute activation over channels of a `(1, c, h, w)` tensor,
/// min-max normalized; a constant map becomes all zeros.
pub fn reduce_channels(t: &Tensor<f32>) -> Result<GrayImage> {
    let (n, c, h, w) = t.dims4()?;
    if n != 1 {
        return Err(Error::Shape(format!("expected a single activation map, got batch of {n}")));
    }
    let mut acc = vec![0f64; h * w];
    for ch in t.data().chunks(h * w) {
        for (a, &v) in acc.iter_mut().zip(ch) {
            *a += (v as f64).abs();
        }
    }
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite activations".into()));
    }
    for a in &mut acc {
        *a /= c.max(1) as f64;
    }
    let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let data = if hi > lo {
        acc.iter().map(|&v| ((v - lo) / (hi - lo)) as f32).collect()
    } else {
        vec![0.0; h * w]
    };
    GrayImage::new(w, h, data)
}

/// Heatmaps of `layers` for one preprocessed, input-sized image.
pub fn extract_heatmaps(
    model: &FusionModel<f32>,
    image_id: &str,
    image: &GrayImage,
    layers: &[LayerName],
) -> Result<HeatmapStack> {
    let size = model.config().input_size;
    if image.width() != size || image.height() != size {
        return Err(Error::Shape(format!(
            "image is {}x{} but the model expects {size}x{size}",
            image.width(),
            image.height()
        )));
    }
    image.ensure_finite("heatmap input")?;
    let mut tape = Tape::inference();
    let x = tape.input(stack_batch(&[image])?);
    let acts = model.forward_detailed(&mut tape, x, Mode::Eval)?;
    let maps = layers
        .iter()
        .map(|&layer| {
            let small = reduce_channels(tape.value(layer.pick(&acts)))?;
            Ok((layer, resize(&small, size, size)?))
        })
        .collect::<Result<_>>()?;
    Ok(HeatmapStack {
        image_id: image_id.to_string(),
        maps,
    })
}

/// All ten heatmaps.
pub fn extract_all(model: &FusionModel<f32>, image_id: &str, image: &GrayImage) -> Result<HeatmapStack> {
    extract_heatmaps(model, image_id, image, &LayerName::ALL)
}

/// A single heatmap by layer name.
pub fn extract_heatmap(model: &FusionModel<f32>, image: &GrayImage, layer: &str) -> Result<GrayImage> {
    let layer: LayerName = layer.parse()?;
    let stack = extract_heatmaps(model, "", image, &[layer])?;
    Ok(stack.maps.into_iter().next().map(|(_, m)| m).expect("one layer requested"))
}

/// [`extract_heatmaps`] over many images in parallel; output order follows input order.
pub fn extract_many(
    model: &FusionModel<f32>,
    images: &[(String, GrayImage)],
    layers: &[LayerName],
) -> Result<Vec<HeatmapStack>> {
    images
        .par_iter()
        .map(|(id, img)| extract_heatmaps(model, id, img, layers))
        .collect()
}
