use nalgebra::{DMatrix, SymmetricEigen};

use super::GrayImage;
use crate::error::{Error, Result};

/// ZCA whitening across a batch: features (pixels) are centered, then
/// rotated by `U (L + eps)^{-1/2} U^T` from the feature covariance
/// `U L U^T`. For batches smaller than the pixel count the equivalent
/// sample-space (Gram) form is used.
pub fn zca_whiten(images: &[GrayImage], epsilon: f64) -> Result<Vec<GrayImage>> {
    let Some(first) = images.first() else {
        return Ok(Vec::new());
    };
    let (w, h) = (first.width(), first.height());
    if images.iter().any(|i| (i.width(), i.height()) != (w, h)) {
        return Err(Error::Shape("ZCA batch images differ in size".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("zca epsilon must be positive, got {epsilon}")));
    }
    let n = images.len();
    let d = w * h;
    let mut x = DMatrix::<f64>::from_fn(n, d, |i, j| images[i].data()[j] as f64);
    for j in 0..d {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let inv_sqrt = |l: f64| 1.0 / (l.max(0.0) + epsilon).sqrt();
    let white = if d <= n {
        let cov = x.transpose() * &x / n as f64;
        let eig = SymmetricEigen::new(cov);
        let u = &eig.eigenvectors;
        let scale = DMatrix::from_diagonal(&eig.eigenvalues.map(inv_sqrt));
        &x * (u * scale * u.transpose())
    } else {
        let gram = &x * x.transpose() / n as f64;
        let eig = SymmetricEigen::new(gram);
        let v = &eig.eigenvectors;
        let scale = DMatrix::from_diagonal(&eig.eigenvalues.map(inv_sqrt));
        v * scale * v.transpose() * &x
    };
    if white.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("ZCA whitening produced non-finite values".into()));
    }
    (0..n)
        .map(|i| GrayImage::new(w, h, white.row(i).iter().map(|&v| v as f32).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn covariance(images: &[GrayImage]) -> DMatrix<f64> {
        let n = images.len();
        let x = DMatrix::<f64>::from_fn(n, images[0].data().len(), |i, j| images[i].data()[j] as f64);
        let means = x.row_mean();
        let c = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - means[j]);
        c.transpose() * &c / n as f64
    }

    fn correlated_batch(n: usize, side: usize, seed: u64) -> Vec<GrayImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let base: Vec<f32> = (0..side * side).map(|_| rng.random_range(-1.0..1.0)).collect();
                // neighbouring pixels share signal, so the raw covariance is far from identity
                GrayImage::from_fn(side, side, |x, y| {
                    let i = y * side + x;
                    base[i] + 0.8 * base[(i + 1) % base.len()]
                })
            })
            .collect()
    }

    #[test]
    fn covariance_path_whitens() {
        let batch = correlated_batch(128, 8, 1);
        let cov = covariance(&zca_whiten(&batch, 1e-6).unwrap());
        for i in 0..64 {
            for j in 0..64 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((cov[(i, j)] - target).abs() < 0.05, "({i},{j}) = {}", cov[(i, j)]);
            }
        }
    }

    #[test]
    fn gram_path_matches_covariance_path() {
        // n < d selects the Gram form; compare against the explicit covariance form.
        let batch = correlated_batch(10, 4, 2);
        let g = zca_whiten(&batch, 1e-3).unwrap();
        let n = batch.len();
        let mut x = DMatrix::<f64>::from_fn(n, 16, |i, j| batch[i].data()[j] as f64);
        for j in 0..16 {
            let m = x.column(j).mean();
            x.column_mut(j).add_scalar_mut(-m);
        }
        let eig = SymmetricEigen::new(x.transpose() * &x / n as f64);
        let u = &eig.eigenvectors;
        let s = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / (l.max(0.0) + 1e-3).sqrt()));
        let expected = &x * (u * s * u.transpose());
        for i in 0..n {
            for j in 0..16 {
                assert!((g[i].data()[j] as f64 - expected[(i, j)]).abs() < 1e-3);
            }
        }
    }
}
