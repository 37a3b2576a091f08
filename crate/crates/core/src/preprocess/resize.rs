use cxrfuse_nn::Tensor;

use super::GrayImage;
use crate::error::{Error, Result};

/// Bilinear resampling with half-pixel centers and clamped borders.
pub fn resize(image: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
    if image.is_empty() {
        return Err(Error::Input("cannot resize an empty image".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::Config(format!("invalid target size {width}x{height}")));
    }
    if (width, height) == (image.width(), image.height()) {
        return Ok(image.clone());
    }
    let xs = axis_samples(image.width(), width);
    let ys = axis_samples(image.height(), height);
    let mut data = Vec::with_capacity(width * height);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            let top = lerp(image.get(x0, y0), image.get(x1, y0), tx);
            let bottom = lerp(image.get(x0, y1), image.get(x1, y1), tx);
            data.push(lerp(top, bottom, ty));
        }
    }
    GrayImage::new(width, height, data)
}

/// `a + (b - a) t`, exact when `a == b`.
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

fn axis_samples(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (pos - i0 as f64) as f32)
        })
        .collect()
}

/// Replicates a grayscale image into a `(3, h, w)` tensor.
pub fn to_three_channels(image: &GrayImage) -> Tensor<f32> {
    let mut data = Vec::with_capacity(3 * image.data().len());
    for _ in 0..3 {
        data.extend_from_slice(image.data());
    }
    Tensor::from_vec(&[3, image.height(), image.width()], data).expect("length matches")
}

/// Square bilinear resample followed by channel replication.
pub fn resize_to_input(image: &GrayImage, size: usize) -> Result<Tensor<f32>> {
    Ok(to_three_channels(&resize(image, size, size)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let img = GrayImage::from_fn(24, 24, |x, y| (x as f32).sin() + y as f32);
        let t = resize_to_input(&img, 24).unwrap();
        assert_eq!(t.shape(), &[3, 24, 24]);
        for c in 0..3 {
            assert_eq!(&t.data()[c * 576..(c + 1) * 576], img.data());
        }
    }

    #[test]
    fn constant_stays_constant_and_aspect_is_not_kept() {
        let img = GrayImage::filled(448, 448, 0.37);
        assert!(resize(&img, 224, 224).unwrap().data().iter().all(|&v| v == 0.37));
        let wide = GrayImage::filled(300, 100, 1.0);
        let r = resize(&wide, 224, 224).unwrap();
        assert_eq!((r.width(), r.height()), (224, 224));
        assert!(resize(&GrayImage::filled(0, 0, 0.0), 4, 4).is_err());
    }

    #[test]
    fn downscale_by_two_averages_pairs() {
        let img = GrayImage::new(4, 1, vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        assert_eq!(resize(&img, 2, 1).unwrap().data(), &[1.0, 5.0]);
    }
}
