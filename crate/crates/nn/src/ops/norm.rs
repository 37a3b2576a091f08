use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel statistics used to normalize one batch.
#[derive(Clone, Debug)]
pub struct ChannelStats<T> {
    pub mean: Vec<T>,
    /// Biased variance (divides by the element count).
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    /// Elements reduced per channel.
    pub count: usize,
}

fn check<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.len() != c || beta.len() != c {
        return shape_err(format!(
            "batch norm over {c} channels got affine params of {} / {}",
            gamma.len(),
            beta.len()
        ));
    }
    Ok((n, c, h * w))
}

/// Mean and biased variance of every channel over the batch and spatial axes.
pub fn channel_stats<T: Scalar>(x: &Tensor<T>, eps: T) -> Result<ChannelStats<T>> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let count = n * hw;
    let denom = T::from_usize(count.max(1)).unwrap();
    let data = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s += data[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
        }
        let m = s / denom;
        let mut q = T::zero();
        for b in 0..n {
            for &v in &data[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                q += (v - m) * (v - m);
            }
        }
        mean[ch] = m;
        var[ch] = q / denom;
    }
    let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    Ok(ChannelStats {
        mean,
        var,
        inv_std,
        count,
    })
}

/// `y = gamma * (x - mean) * inv_std + beta`, channel-wise.
pub fn batch_norm_apply<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
) -> Result<Tensor<T>> {
    let (n, c, hw) = check(x, gamma, beta)?;
    let mut y = x.clone();
    let out = y.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let scale = gamma.data()[ch] * inv_std[ch];
            let shift = beta.data()[ch] - mean[ch] * scale;
            for v in &mut out[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                *v = *v * scale + shift;
            }
        }
    }
    Ok(y)
}

pub struct NormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Backward pass of batch normalization.
///
/// With `batch_stats` the mean and variance are functions of `x` (training
/// mode) and their derivatives are included; otherwise they are constants.
pub fn batch_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    dy: &Tensor<T>,
    batch_stats: bool,
) -> Result<NormGrads<T>> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    if dy.shape() != x.shape() {
        return shape_err("batch norm output grad shape mismatch");
    }
    let m = T::from_usize((n * hw).max(1)).unwrap();
    let (xd, dyd) = (x.data(), dy.data());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        for b in 0..n {
            let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for (&xv, &g) in xd[r.clone()].iter().zip(&dyd[r]) {
                dbeta[ch] += g;
                dgamma[ch] += g * (xv - mean[ch]) * inv_std[ch];
            }
        }
    }
    let mut dx = Tensor::zeros(x.shape());
    let out = dx.data_mut();
    for ch in 0..c {
        let k = gamma.data()[ch] * inv_std[ch];
        for b in 0..n {
            let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for ((o, &xv), &g) in out[r.clone()].iter_mut().zip(&xd[r.clone()]).zip(&dyd[r]) {
                *o = if batch_stats {
                    let xhat = (xv - mean[ch]) * inv_std[ch];
                    k / m * (m * g - dbeta[ch] - xhat * dgamma[ch])
                } else {
                    k * g
                };
            }
        }
    }
    Ok(NormGrads {
        input: dx,
        gamma: Tensor::from_vec(&[c], dgamma)?,
        beta: Tensor::from_vec(&[c], dbeta)?,
    })
}
