//! Image conditioning: loading, denoising, resizing, normalization and
//! training-time augmentation.

mod augment;
mod denoise;
mod io;
mod resize;
mod zca;

use cxrfuse_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{augment, augment_batch, rotate, shift, AugmentationSpec};
pub use denoise::{denoise, total_variation, BlurKernel, DenoiseMethod};
pub use io::{load_gray, save_gray};
pub use resize::{resize, resize_to_input, to_three_channels};
pub use zca::zca_whiten;

/// Single-channel image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width * height != data.len() {
            return Err(Error::Shape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        GrayImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mean and population standard deviation.
    pub fn mean_std(&self) -> (f64, f64) {
        let n = self.data.len().max(1) as f64;
        let mean = self.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    pub(crate) fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Input(format!("{what}: image contains non-finite pixels")))
        }
    }
}

/// One loaded image with its label and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub label: String,
    pub source: crate::datasets::CohortSource,
    pub pixels: GrayImage,
}

/// Deterministic per-image conditioning shared by training and evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub input_size: usize,
    /// Filters applied in order before resizing; none by default.
    pub denoise: Vec<DenoiseMethod>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            input_size: 224,
            denoise: Vec::new(),
        }
    }
}

impl PreprocessConfig {
    pub fn with_input_size(input_size: usize) -> Self {
        PreprocessConfig {
            input_size,
            ..Default::default()
        }
    }

    /// Denoise, resize to the model input, normalize.
    pub fn apply(&self, image: &GrayImage) -> Result<GrayImage> {
        image.ensure_finite("preprocess")?;
        let mut img = image.clone();
        for m in &self.denoise {
            img = denoise(&img, m)?;
        }
        let img = resize(&img, self.input_size, self.input_size)?;
        Ok(normalize(&img))
    }
}

/// Standardizes to zero mean and unit (population) standard deviation.
/// Near-constant images map to all zeros.
pub fn normalize(image: &GrayImage) -> GrayImage {
    let (mean, std) = image.mean_std();
    let data = if std < 1e-12 {
        vec![0.0; image.data.len()]
    } else {
        image.data.iter().map(|&v| ((v as f64 - mean) / std) as f32).collect()
    };
    GrayImage { data, ..*image }
}

/// Stacks equally sized images into an `(n, 3, h, w)` batch.
pub fn stack_batch(images: &[&GrayImage]) -> Result<Tensor<f32>> {
    let (w, h) = images.first().map_or((0, 0), |i| (i.width, i.height));
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if (img.width, img.height) != (w, h) {
            return Err(Error::Shape("batch images differ in size".into()));
        }
        for _ in 0..3 {
            data.extend_from_slice(&img.data);
        }
    }
    Ok(Tensor::from_vec(&[images.len(), 3, h, w], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let c = normalize(&GrayImage::filled(4, 3, 7.0));
        assert!(c.data().iter().all(|&v| v == 0.0));
        let two = normalize(&GrayImage::new(2, 1, vec![0.0, 2.0]).unwrap());
        assert_eq!(two.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn pipeline_output_is_input_sized_and_standardized() {
        let img = GrayImage::from_fn(90, 70, |x, y| (x * y % 13) as f32);
        let out = PreprocessConfig::with_input_size(32).apply(&img).unwrap();
        assert_eq!((out.width(), out.height()), (32, 32));
        let (m, s) = out.mean_std();
        assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-4);
        let bad = GrayImage::new(1, 1, vec![f32::NAN]).unwrap();
        assert!(PreprocessConfig::default().apply(&bad).is_err());
    }

    #[test]
    fn stack_replicates_channels() {
        let a = GrayImage::from_fn(2, 2, |x, y| (x + 2 * y) as f32);
        let t = stack_batch(&[&a, &a]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 2, 2]);
        assert_eq!(&t.data()[4..8], a.data());
    }
}
