use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};

use super::LayerName;
use crate::error::{Error, Result};
use crate::preprocess::GrayImage;

/// Blend weight of the color-mapped heatmap.
pub const OVERLAY_ALPHA: f64 = 0.5;

/// Black-red-yellow-white ramp for `t` in `[0, 1]`.
pub fn hot(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [(3.0 * t).min(1.0), (3.0 * t - 1.0).clamp(0.0, 1.0), (3.0 * t - 2.0).clamp(0.0, 1.0)]
}

/// `<image_id>.<layer>.png`, with path separators in the id replaced.
pub fn overlay_file_name(image_id: &str, layer: LayerName) -> String {
    let id: String = image_id.chars().map(|c| if matches!(c, '/' | '\\') { '_' } else { c }).collect();
    format!("{id}.{layer}.png")
}

/// 8-bit RGB pixels of `(1 - a) * gray + a * hot(map)`. The image is
/// min-max scaled for display.
pub fn overlay_rgb(image: &GrayImage, map: &GrayImage) -> Result<Vec<u8>> {
    if (image.width(), image.height()) != (map.width(), map.height()) {
        return Err(Error::Shape(format!(
            "image is {}x{} but the heatmap is {}x{}",
            image.width(),
            image.height(),
            map.width(),
            map.height()
        )));
    }
    let lo = image.data().iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = image.data().iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut out = Vec::with_capacity(image.data().len() * 3);
    for (&g, &m) in image.data().iter().zip(map.data()) {
        let g = if hi > lo { (g as f64 - lo) / (hi - lo) } else { 0.0 };
        for c in hot(m as f64) {
            let v = (1.0 - OVERLAY_ALPHA) * g + OVERLAY_ALPHA * c;
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Writes the overlay as a PNG with fixed encoder settings, so equal inputs
/// give equal bytes.
pub fn render_overlay(image: &GrayImage, map: &GrayImage, path: &Path) -> Result<()> {
    let rgb = overlay_rgb(image, map)?;
    let file = std::fs::File::create(path).map_err(|e| Error::path_io(path, e))?;
    let encoder = PngEncoder::new_with_quality(BufWriter::new(file), CompressionType::Default, FilterType::NoFilter);
    encoder
        .write_image(&rgb, image.width() as u32, image.height() as u32, ExtendedColorType::Rgb8)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::path_io(path, io),
            other => Error::Data(format!("{}: {other}", path.display())),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_map_gives_half_intensity_gray() {
        let img = GrayImage::from_fn(4, 3, |x, y| (x + 4 * y) as f32);
        let rgb = overlay_rgb(&img, &GrayImage::filled(4, 3, 0.0)).unwrap();
        for (i, px) in rgb.chunks(3).enumerate() {
            let expected = (0.5 * i as f64 / 11.0 * 255.0).round() as u8;
            assert_eq!(px, [expected; 3]);
        }
    }

    #[test]
    fn hot_ramp_end_points() {
        assert_eq!(hot(0.0), [0.0, 0.0, 0.0]);
        assert_eq!(hot(1.0), [1.0, 1.0, 1.0]);
        assert_eq!(hot(1.0 / 3.0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn ids_become_flat_file_names() {
        assert_eq!(overlay_file_name("source1/covid/a.png", LayerName::ConvA), "source1_covid_a.png.convA.png");
    }
}
