use crate::error::{shape_err, Result};
use crate::scalar::{matmul, Scalar};
use crate::tensor::Tensor;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU given its *output*.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
    dx
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return shape_err(format!("cannot add {:?} and {:?}", a.shape(), b.shape()));
    }
    let mut y = a.clone();
    y.add_assign(b);
    Ok(y)
}

/// Concatenation of NCHW tensors along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = parts.first() else {
        return shape_err("concat of zero tensors");
    };
    let (n, _, h, w) = first.dims4()?;
    let mut total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return shape_err(format!(
                "concat needs equal batch and spatial size, got {:?} and {:?}",
                first.shape(),
                p.shape()
            ));
        }
        total += pc;
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * total * hw);
    for b in 0..n {
        for p in parts {
            data.extend_from_slice(p.sample(b));
        }
    }
    Tensor::from_vec(&[n, total, h, w], data)
}

/// Splits a channel-concatenated gradient back into its parts.
pub fn split_channels<T: Scalar>(dy: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (n, c, h, w) = dy.dims4()?;
    if channels.iter().sum::<usize>() != c {
        return shape_err("split sizes do not sum to channel count");
    }
    let hw = h * w;
    let mut outs: Vec<Vec<T>> = channels.iter().map(|&pc| Vec::with_capacity(n * pc * hw)).collect();
    for b in 0..n {
        let s = dy.sample(b);
        let mut off = 0;
        for (o, &pc) in outs.iter_mut().zip(channels) {
            o.extend_from_slice(&s[off * hw..(off + pc) * hw]);
            off += pc;
        }
    }
    outs.into_iter()
        .zip(channels)
        .map(|(d, &pc)| Tensor::from_vec(&[n, pc, h, w], d))
        .collect()
}

/// `y = x w^T + b` with `x: [n, in]`, `w: [out, in]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, fin) = x.dims2()?;
    let (fout, win) = w.dims2()?;
    if fin != win {
        return shape_err(format!("linear expects {win} features, got {fin}"));
    }
    let mut y = Tensor::zeros(&[n, fout]);
    matmul(x.data(), false, w.data(), true, y.data_mut(), n, fin, fout, T::one(), T::zero());
    if let Some(b) = b {
        if b.len() != fout {
            return shape_err("linear bias length mismatch");
        }
        for row in y.data_mut().chunks_mut(fout.max(1)) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    Ok(y)
}

pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> Result<LinearGrads<T>> {
    let (n, fin) = x.dims2()?;
    let (fout, _) = w.dims2()?;
    let mut dx = Tensor::zeros(&[n, fin]);
    matmul(dy.data(), false, w.data(), false, dx.data_mut(), n, fout, fin, T::one(), T::zero());
    let mut dw = Tensor::zeros(&[fout, fin]);
    matmul(dy.data(), true, x.data(), false, dw.data_mut(), fout, n, fin, T::one(), T::zero());
    let mut db = vec![T::zero(); fout];
    for row in dy.data().chunks(fout.max(1)) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(LinearGrads {
        input: dx,
        weight: dw,
        bias: Tensor::from_vec(&[fout], db)?,
    })
}

/// Row-wise softmax of an `[n, k]` matrix.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = x.dims2()?;
    let mut y = x.clone();
    if k == 0 {
        return Ok(y);
    }
    for row in y.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Ok(y)
}

/// Softmax backward given its output `p`: `dx = p * (dy - <dy, p>)`.
pub fn softmax_backward<T: Scalar>(p: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = p.dims2()?;
    let mut dx = dy.clone();
    if k == 0 {
        return Ok(dx);
    }
    for (drow, prow) in dx.data_mut().chunks_mut(k).zip(p.data().chunks(k)) {
        let dot: T = drow.iter().zip(prow).map(|(&g, &q)| g * q).sum();
        for (g, &q) in drow.iter_mut().zip(prow) {
            *g = q * (*g - dot);
        }
    }
    Ok(dx)
}

/// Mean over rows of `-ln(p[target] + eps)`.
pub fn cross_entropy<T: Scalar>(p: &Tensor<T>, targets: &[usize], eps: T) -> Result<T> {
    let (n, k) = p.dims2()?;
    if targets.len() != n {
        return shape_err(format!("{} targets for {n} probability rows", targets.len()));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return shape_err(format!("target class {t} out of range for {k} classes"));
    }
    if n == 0 {
        return Ok(T::zero());
    }
    let s: T = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| -(p.data()[i * k + t] + eps).ln())
        .sum();
    Ok(s / T::from_usize(n).unwrap())
}

pub fn cross_entropy_backward<T: Scalar>(p: &Tensor<T>, targets: &[usize], eps: T, dloss: T) -> Result<Tensor<T>> {
    let (n, k) = p.dims2()?;
    let mut dp = Tensor::zeros(&[n, k]);
    let scale = dloss / T::from_usize(n.max(1)).unwrap();
    for (i, &t) in targets.iter().enumerate() {
        dp.data_mut()[i * k + t] = -scale / (p.data()[i * k + t] + eps);
    }
    Ok(dp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 1000.0, 0.0, -1000.0]).unwrap();
        let p = softmax(&x).unwrap();
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert!(p.data()[3] > 0.999);
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = Tensor::from_vec(&[2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2, 1, 2], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3, 1, 2]);
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]);
        let parts = split_channels(&c, &[1, 2]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn cross_entropy_of_uniform_is_log_k() {
        let p = Tensor::full(&[3, 4], 0.25f64);
        let l = cross_entropy(&p, &[0, 3, 1], 1e-12).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-9);
        assert!(cross_entropy(&p, &[0, 4, 1], 1e-12).is_err());
    }
}
