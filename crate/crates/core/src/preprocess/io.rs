use std::path::Path;

use image::{ColorType, DynamicImage};

use super::GrayImage;
use crate::error::{Error, Result};

/// Loads a PNG or JPEG as luminance in `[0, 1]`. Colour images are reduced
/// with the Rec. 601 weights (0.299, 0.587, 0.114).
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    from_dynamic(&img)
}

fn from_dynamic(img: &DynamicImage) -> Result<GrayImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16 => img.to_luma32f().into_raw(),
        _ => img
            .to_rgb32f()
            .pixels()
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect(),
    };
    GrayImage::new(w, h, data)
}

/// Writes an image as 8-bit grayscale PNG, clamping values to `[0, 1]`.
pub fn save_gray(image: &GrayImage, path: &Path) -> Result<()> {
    let bytes = image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = image::GrayImage::from_raw(image.width() as u32, image.height() as u32, bytes)
        .ok_or_else(|| Error::Shape("pixel buffer does not match image size".into()))?;
    buf.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::path_io(path, io),
        other => Error::Data(format!("{}: {other}", path.display())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_colour_conversion() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let img = GrayImage::from_fn(5, 4, |x, y| ((x + y) as f32) / 7.0);
        save_gray(&img, &p).unwrap();
        let back = load_gray(&p).unwrap();
        assert_eq!((back.width(), back.height()), (5, 4));
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }

        let rgb = image::RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 0]));
        let q = dir.path().join("c.png");
        rgb.save(&q).unwrap();
        let g = load_gray(&q).unwrap();
        assert!(g.data().iter().all(|&v| (v - 0.299).abs() < 1e-6));

        let wide = image::ImageBuffer::<image::Luma<u16>, _>::from_pixel(1, 1, image::Luma([65535u16]));
        let r = dir.path().join("w.png");
        wide.save(&r).unwrap();
        assert_eq!(load_gray(&r).unwrap().data(), &[1.0]);
        assert!(matches!(load_gray(&dir.path().join("missing.png")), Err(Error::Data(_))));
    }
}
