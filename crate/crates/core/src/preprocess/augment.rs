//! Random rotation and translation, with optional per-batch ZCA whitening.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{zca_whiten, GrayImage};
use crate::error::{config, Result};

/// Shift limits are in pixels of a 224 px input and scale with the input size.
pub const REFERENCE_SIZE: usize = 224;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    /// Angles are drawn uniformly from `[-rotation_degrees, rotation_degrees]`.
    pub rotation_degrees: f64,
    pub width_shift_px: u32,
    pub height_shift_px: u32,
    pub zca_whitening: bool,
    pub zca_epsilon: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            rotation_degrees: 15.0,
            width_shift_px: 20,
            height_shift_px: 20,
            zca_whitening: false,
            zca_epsilon: 1e-6,
        }
    }
}

impl AugmentationSpec {
    /// No-op augmentation.
    pub fn none() -> Self {
        AugmentationSpec {
            rotation_degrees: 0.0,
            width_shift_px: 0,
            height_shift_px: 0,
            zca_whitening: false,
            zca_epsilon: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rotation_degrees >= 0.0 && self.rotation_degrees <= 180.0) {
            return config(format!("rotation_degrees must be in [0, 180], got {}", self.rotation_degrees));
        }
        if !(self.zca_epsilon > 0.0 && self.zca_epsilon.is_finite()) {
            return config(format!("zca_epsilon must be positive, got {}", self.zca_epsilon));
        }
        Ok(())
    }

    /// Rescales the pixel shift limits from the 224 px reference to `input_size`.
    pub fn scaled_to(&self, input_size: usize) -> Self {
        let s = |px: u32| ((px as u64 * input_size as u64 + REFERENCE_SIZE as u64 / 2) / REFERENCE_SIZE as u64) as u32;
        AugmentationSpec {
            width_shift_px: s(self.width_shift_px),
            height_shift_px: s(self.height_shift_px),
            ..self.clone()
        }
    }
}

/// Rotation about the image center, then an integer shift. Uncovered
/// pixels are filled with zero. ZCA is a batch operation, see [`augment_batch`].
pub fn augment<R: Rng + ?Sized>(image: &GrayImage, spec: &AugmentationSpec, rng: &mut R) -> GrayImage {
    let r = spec.rotation_degrees;
    let angle = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
    let draw = |rng: &mut R, m: u32| if m > 0 { rng.random_range(-(m as i64)..=m as i64) } else { 0 };
    let dx = draw(rng, spec.width_shift_px);
    let dy = draw(rng, spec.height_shift_px);
    let rotated = if angle == 0.0 { image.clone() } else { rotate(image, angle) };
    if dx == 0 && dy == 0 {
        rotated
    } else {
        shift(&rotated, dx, dy)
    }
}

/// Augments each image with its own generator, then whitens the batch if requested.
pub fn augment_batch<R: Rng>(images: &[GrayImage], spec: &AugmentationSpec, rngs: &mut [R]) -> Result<Vec<GrayImage>> {
    spec.validate()?;
    let out: Vec<GrayImage> = images.iter().zip(rngs.iter_mut()).map(|(img, rng)| augment(img, spec, rng)).collect();
    if spec.zca_whitening {
        zca_whiten(&out, spec.zca_epsilon)
    } else {
        Ok(out)
    }
}

/// Counter-clockwise rotation (as displayed, y pointing down) with bilinear sampling.
pub fn rotate(image: &GrayImage, degrees: f64) -> GrayImage {
    let (w, h) = (image.width(), image.height());
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let pixel = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            image.get(x as usize, y as usize) as f64
        }
    };
    GrayImage::from_fn(w, h, |x, y| {
        // inverse map: source = R(-theta) (p - c) + c
        let (px, py) = (x as f64 - cx, y as f64 - cy);
        let sx = cos * px - sin * py + cx;
        let sy = sin * px + cos * py + cy;
        let (x0, y0) = (sx.floor(), sy.floor());
        let (tx, ty) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let top = pixel(x0, y0) * (1.0 - tx) + pixel(x0 + 1, y0) * tx;
        let bottom = pixel(x0, y0 + 1) * (1.0 - tx) + pixel(x0 + 1, y0 + 1) * tx;
        (top * (1.0 - ty) + bottom * ty) as f32
    })
}

/// Moves content by `(dx, dy)` pixels (positive = right/down), zero fill.
pub fn shift(image: &GrayImage, dx: i64, dy: i64) -> GrayImage {
    let (w, h) = (image.width() as i64, image.height() as i64);
    GrayImage::from_fn(w as usize, h as usize, |x, y| {
        let (sx, sy) = (x as i64 - dx, y as i64 - dy);
        if sx < 0 || sy < 0 || sx >= w || sy >= h {
            0.0
        } else {
            image.get(sx as usize, sy as usize)
        }
    })
}
