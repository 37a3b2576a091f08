//! Deconvolution and edge-preserving smoothing filters.

use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{Error, Result};

/// Square blur model for the deconvolution filters (odd side length).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlurKernel {
    pub size: usize,
    pub weights: Vec<f64>,
}

impl BlurKernel {
    /// 3x3 binomial kernel `[1 2 1]^T [1 2 1] / 16`.
    pub fn binomial3() -> Self {
        let b = [1.0, 2.0, 1.0];
        let weights = b.iter().flat_map(|&r| b.iter().map(move |&c| r * c / 16.0)).collect();
        BlurKernel { size: 3, weights }
    }

    pub fn identity() -> Self {
        BlurKernel {
            size: 1,
            weights: vec![1.0],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.size % 2 == 0 || self.weights.len() != self.size * self.size {
            return Err(Error::Config(format!(
                "blur kernel must be odd-sized and square, got size {} with {} weights",
                self.size,
                self.weights.len()
            )));
        }
        if !self.weights.iter().all(|w| w.is_finite()) {
            return Err(Error::Config("blur kernel weights must be finite".into()));
        }
        Ok(())
    }

    fn l1(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    /// Correlation with replicated borders, so flat regions stay flat up to
    /// the image edge. `transpose` applies the exact adjoint (a scatter onto
    /// the clamped source pixels).
    fn apply(&self, img: &[f64], w: usize, h: usize, transpose: bool) -> Vec<f64> {
        let r = (self.size / 2) as isize;
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let mut out = vec![0.0; img.len()];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let here = y as usize * w + x as usize;
                let mut acc = 0.0;
                for ky in -r..=r {
                    let sy = clamp(y + ky, h);
                    for kx in -r..=r {
                        let src = sy * w + clamp(x + kx, w);
                        let wk = self.weights[(ky + r) as usize * self.size + (kx + r) as usize];
                        if transpose {
                            out[src] += wk * img[here];
                        } else {
                            acc += wk * img[src];
                        }
                    }
                }
                if !transpose {
                    out[here] = acc;
                }
            }
        }
        out
    }

    /// Largest absolute column sum of the blur operator on a `w x h` grid.
    /// Border replication can make this exceed the kernel L1 norm.
    fn max_column_sum(&self, w: usize, h: usize) -> f64 {
        let abs = BlurKernel {
            size: self.size,
            weights: self.weights.iter().map(|v| v.abs()).collect(),
        };
        abs.apply(&vec![1.0; w * h], w, h, true).into_iter().fold(0.0, f64::max)
    }
}

impl Default for BlurKernel {
    fn default() -> Self {
        BlurKernel::binomial3()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum DenoiseMethod {
    /// Van Cittert iteration `x <- x + (b - B x)` against the binomial blur `B`.
    BinomialDeconv { iterations: usize },
    /// `x <- x + tau A^T (b - A x)`.
    Landweber {
        tau: f64,
        iterations: usize,
        #[serde(default)]
        blur: BlurKernel,
    },
    /// Modified curvature diffusion equation.
    CurvatureAnisotropicDiffusion {
        iterations: usize,
        time_step: f64,
        conductance: f64,
    },
}

impl DenoiseMethod {
    pub fn binomial_deconv() -> Self {
        DenoiseMethod::BinomialDeconv { iterations: 3 }
    }

    pub fn landweber() -> Self {
        DenoiseMethod::Landweber {
            tau: 1.0,
            iterations: 10,
            blur: BlurKernel::binomial3(),
        }
    }

    pub fn curvature_diffusion() -> Self {
        DenoiseMethod::CurvatureAnisotropicDiffusion {
            iterations: 5,
            time_step: 0.0625,
            conductance: 3.0,
        }
    }
}

pub fn denoise(image: &GrayImage, method: &DenoiseMethod) -> Result<GrayImage> {
    image.ensure_finite("denoise")?;
    let (w, h) = (image.width(), image.height());
    let b: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let out = match method {
        DenoiseMethod::BinomialDeconv { iterations } => {
            let k = BlurKernel::binomial3();
            let mut x = b.clone();
            for _ in 0..*iterations {
                let ax = k.apply(&x, w, h, false);
                for ((xi, bi), ai) in x.iter_mut().zip(&b).zip(&ax) {
                    *xi += bi - ai;
                }
            }
            x
        }
        DenoiseMethod::Landweber { tau, iterations, blur } => landweber(&b, w, h, *tau, *iterations, blur)?,
        DenoiseMethod::CurvatureAnisotropicDiffusion {
            iterations,
            time_step,
            conductance,
        } => {
            if !(*time_step > 0.0 && *conductance > 0.0) {
                return Err(Error::Config("diffusion time step and conductance must be positive".into()));
            }
            let mut x = b;
            for _ in 0..*iterations {
                x = curvature_step(&x, w, h, *time_step, *conductance);
            }
            x
        }
    };
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric(format!("{method:?} produced non-finite pixels")));
    }
    GrayImage::new(w, h, out.into_iter().map(|v| v as f32).collect())
}

fn landweber(b: &[f64], w: usize, h: usize, tau: f64, iterations: usize, blur: &BlurKernel) -> Result<Vec<f64>> {
    blur.validate()?;
    // ||A||_2^2 <= ||A||_1 ||A||_inf; row sums are the kernel L1 norm.
    let (rows, cols) = (blur.l1(), blur.max_column_sum(w, h));
    let limit = 2.0 / (rows * cols);
    if !(tau > 0.0 && tau < limit) {
        return Err(Error::Numeric(format!(
            "Landweber step tau = {tau} is outside the stable range (0, {limit:.6}) for this blur kernel \
             (row sum {rows:.6}, column sum {cols:.6}); the iteration would diverge"
        )));
    }
    let mut x = b.to_vec();
    for _ in 0..iterations {
        let ax = blur.apply(&x, w, h, false);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let g = blur.apply(&r, w, h, true);
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi += tau * gi;
        }
    }
    Ok(x)
}

/// One explicit step of the modified curvature diffusion equation
/// `I_t = |grad I| div(c(|grad I|) grad I / |grad I|)` with replicated borders
/// and upwind differencing of the outer gradient magnitude.
fn curvature_step(img: &[f64], w: usize, h: usize, dt: f64, conductance: f64) -> Vec<f64> {
    let at = |x: isize, y: isize| img[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut mean_sq = 0.0;
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y) - at(x - 1, y)) / 2.0;
            let gy = (at(x, y + 1) - at(x, y - 1)) / 2.0;
            mean_sq += gx * gx + gy * gy;
        }
    }
    mean_sq /= img.len() as f64;
    if mean_sq == 0.0 {
        return img.to_vec();
    }
    let k = 2.0 * conductance * conductance * mean_sq;
    let flux = |d: f64, mag_sq: f64| {
        if mag_sq == 0.0 {
            0.0
        } else {
            (-mag_sq / k).exp() * d / mag_sq.sqrt()
        }
    };
    let mut out = img.to_vec();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let c = at(x, y);
            let center = [(at(x + 1, y) - at(x - 1, y)) / 2.0, (at(x, y + 1) - at(x, y - 1)) / 2.0];
            let mut speed = 0.0;
            let mut fwd = [0.0; 2];
            let mut bwd = [0.0; 2];
            for axis in 0..2 {
                let (ex, ey) = if axis == 0 { (1, 0) } else { (0, 1) };
                let (ox, oy) = (ey, ex);
                fwd[axis] = at(x + ex, y + ey) - c;
                bwd[axis] = c - at(x - ex, y - ey);
                let across_f = (at(x + ex + ox, y + ey + oy) - at(x + ex - ox, y + ey - oy)) / 2.0;
                let across_b = (at(x - ex + ox, y - ey + oy) - at(x - ex - ox, y - ey - oy)) / 2.0;
                let other = center[1 - axis];
                let mag_f = fwd[axis].powi(2) + 0.25 * (other + across_f).powi(2);
                let mag_b = bwd[axis].powi(2) + 0.25 * (other + across_b).powi(2);
                speed += flux(fwd[axis], mag_f) - flux(bwd[axis], mag_b);
            }
            let mut grad = 0.0;
            for axis in 0..2 {
                grad += if speed > 0.0 {
                    bwd[axis].min(0.0).powi(2) + fwd[axis].max(0.0).powi(2)
                } else {
                    bwd[axis].max(0.0).powi(2) + fwd[axis].min(0.0).powi(2)
                };
            }
            out[y as usize * w + x as usize] = c + dt * grad.sqrt() * speed;
        }
    }
    out
}

/// Anisotropic total variation: sum of absolute forward differences.
pub fn total_variation(image: &GrayImage) -> f64 {
    let (w, h) = (image.width(), image.height());
    let mut tv = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = image.get(x, y) as f64;
            if x + 1 < w {
                tv += (image.get(x + 1, y) as f64 - v).abs();
            }
            if y + 1 < h {
                tv += (image.get(x, y + 1) as f64 - v).abs();
            }
        }
    }
    tv
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy(seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = GrayImage::from_fn(32, 32, |x, y| if (x / 8 + y / 8) % 2 == 0 { 0.2 } else { 0.8 });
        for v in img.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        img
    }

    fn blurred(truth: &GrayImage) -> GrayImage {
        let (w, h) = (truth.width(), truth.height());
        let x: Vec<f64> = truth.data().iter().map(|&v| v as f64).collect();
        let b = BlurKernel::binomial3().apply(&x, w, h, false);
        GrayImage::new(w, h, b.iter().map(|&v| v as f32).collect()).unwrap()
    }

    fn sq_err(a: &GrayImage, b: &GrayImage) -> f64 {
        a.data().iter().zip(b.data()).map(|(p, q)| ((p - q) as f64).powi(2)).sum()
    }

    #[test]
    fn landweber_with_identity_blur_is_a_fixed_point() {
        let img = noisy(1);
        for tau in [0.1, 1.0, 1.9] {
            let m = DenoiseMethod::Landweber {
                tau,
                iterations: 50,
                blur: BlurKernel::identity(),
            };
            assert_eq!(denoise(&img, &m).unwrap(), img);
        }
    }

    #[test]
    fn landweber_rejects_unstable_step() {
        let m = DenoiseMethod::Landweber {
            tau: 2.5,
            iterations: 10,
            blur: BlurKernel::binomial3(),
        };
        let err = denoise(&noisy(0), &m).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref s) if s.contains("stable range")), "{err}");
    }

    #[test]
    fn deconvolution_moves_towards_the_unblurred_image() {
        let truth = noisy(2);
        let b = blurred(&truth);
        for m in [DenoiseMethod::landweber(), DenoiseMethod::binomial_deconv()] {
            let restored = denoise(&b, &m).unwrap();
            assert!(sq_err(&restored, &truth) < sq_err(&b, &truth), "{m:?}");
        }
    }

    #[test]
    fn adjoint_matches_forward() {
        let (w, h) = (7, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = BlurKernel {
            size: 3,
            weights: (0..9).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let x: Vec<f64> = (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(&k.apply(&x, w, h, false), &y);
        let rhs = dot(&x, &k.apply(&y, w, h, true));
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn deconvolution_keeps_flat_borders() {
        let flat = GrayImage::filled(9, 6, 0.4);
        for m in [DenoiseMethod::landweber(), DenoiseMethod::binomial_deconv()] {
            let out = denoise(&flat, &m).unwrap();
            assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-6), "{m:?}");
        }
    }

    #[test]
    fn diffusion_keeps_constant_images_and_lowers_tv() {
        let flat = GrayImage::filled(16, 16, 0.3);
        assert_eq!(denoise(&flat, &DenoiseMethod::curvature_diffusion()).unwrap(), flat);
        let img = noisy(3);
        let out = denoise(&img, &DenoiseMethod::curvature_diffusion()).unwrap();
        assert!(total_variation(&out) < total_variation(&img));
    }
}
