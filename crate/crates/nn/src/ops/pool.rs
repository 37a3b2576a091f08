use crate::error::{shape_err, Result};
use crate::ops::conv::{output_size, ConvSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Max pooling with `-inf` padding. Returns the output and, per output cell,
/// the flat index of the winning input within its `h * w` plane.
pub fn max_pool_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: usize,
    spec: ConvSpec,
) -> Result<(Tensor<T>, Vec<u32>)> {
    let (n, c, h, w) = x.dims4()?;
    let (Some(oh), Some(ow)) = (output_size(h, kernel, spec), output_size(w, kernel, spec)) else {
        return shape_err(format!("max pool {kernel} does not fit {h}x{w}"));
    };
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    let out = y.data_mut();
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_at = 0usize;
                for i in 0..kernel {
                    let iy = (oy * spec.stride + i) as isize - spec.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for j in 0..kernel {
                        let ix = (ox * spec.stride + j) as isize - spec.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let at = iy as usize * w + ix as usize;
                        if src[at] > best {
                            best = src[at];
                            best_at = at;
                        }
                    }
                }
                let o = plane * oh * ow + oy * ow + ox;
                out[o] = best;
                arg[o] = best_at as u32;
            }
        }
    }
    Ok((y, arg))
}

pub fn max_pool_backward<T: Scalar>(input_shape: &[usize], arg: &[u32], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = dy.dims4()?;
    let hw: usize = input_shape[2] * input_shape[3];
    let mut dx = Tensor::zeros(input_shape);
    let out = dx.data_mut();
    for plane in 0..n * c {
        for k in 0..oh * ow {
            let o = plane * oh * ow + k;
            out[plane * hw + arg[o] as usize] += dy.data()[o];
        }
    }
    Ok(dx)
}

/// Non-overlapping `k x k` average pooling (stride `k`, trailing rows/cols dropped).
pub fn avg_pool_forward<T: Scalar>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if k == 0 || h < k || w < k {
        return shape_err(format!("avg pool {k} does not fit {h}x{w}"));
    }
    let (oh, ow) = (h / k, w / k);
    let inv = T::one() / T::from_usize(k * k).unwrap();
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    let out = y.data_mut();
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = T::zero();
                for i in 0..k {
                    for j in 0..k {
                        s += src[(oy * k + i) * w + ox * k + j];
                    }
                }
                out[plane * oh * ow + oy * ow + ox] = s * inv;
            }
        }
    }
    Ok(y)
}

pub fn avg_pool_backward<T: Scalar>(input_shape: &[usize], k: usize, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = dy.dims4()?;
    let (h, w) = (input_shape[2], input_shape[3]);
    let inv = T::one() / T::from_usize(k * k).unwrap();
    let mut dx = Tensor::zeros(input_shape);
    let out = dx.data_mut();
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dy.data()[plane * oh * ow + oy * ow + ox] * inv;
                for i in 0..k {
                    for j in 0..k {
                        out[plane * h * w + (oy * k + i) * w + ox * k + j] = g;
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Mean over the spatial axes: `[n, c, h, w] -> [n, c]`.
pub fn global_avg_pool_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let inv = T::one() / T::from_usize(hw.max(1)).unwrap();
    let data = (0..n * c)
        .map(|p| x.data()[p * hw..(p + 1) * hw].iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(&[n, c], data)
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let hw = input_shape[2] * input_shape[3];
    let inv = T::one() / T::from_usize(hw.max(1)).unwrap();
    let mut dx = Tensor::zeros(input_shape);
    for (p, &g) in dy.data().iter().enumerate() {
        dx.data_mut()[p * hw..(p + 1) * hw].fill(g * inv);
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool_picks_window_maximum_and_routes_gradient() {
        let x = Tensor::from_vec(&[1, 1, 4, 4], (0..16).map(|v| v as f64).collect()).unwrap();
        let (y, arg) = max_pool_forward(&x, 3, ConvSpec::new(2, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
        let dy = Tensor::full(&[1, 1, 2, 2], 1.0);
        let dx = max_pool_backward(x.shape(), &arg, &dy).unwrap();
        assert_eq!(dx.data().iter().sum::<f64>(), 4.0);
        assert_eq!(dx.data()[15], 1.0);
    }

    #[test]
    fn avg_pools_average() {
        let x = Tensor::from_vec(&[1, 1, 2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let y = avg_pool_forward(&x, 2).unwrap();
        assert_eq!(y.data(), &[3.5, 5.5]);
        let g = global_avg_pool_forward(&x).unwrap();
        assert_eq!(g.shape(), &[1, 1]);
        assert_eq!(g.data(), &[4.5]);
    }
}
