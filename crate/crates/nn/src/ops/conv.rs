use crate::error::{shape_err, Result};
use crate::scalar::{matmul, Scalar};
use crate::tensor::Tensor;

/// Stride and symmetric zero padding of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize) -> Self {
        ConvSpec { stride, padding }
    }
}

/// Spatial output size along one axis, `None` when the kernel does not fit.
pub fn output_size(input: usize, kernel: usize, spec: ConvSpec) -> Option<usize> {
    let padded = input + 2 * spec.padding;
    if spec.stride == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / spec.stride + 1)
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, spec: ConvSpec) -> Result<Self> {
        let (n, c, h, wd) = x.dims4()?;
        let (cout, cin, kh, kw) = w.dims4()?;
        if cin != c {
            return shape_err(format!(
                "conv input has {c} channels but kernel {:?} expects {cin}",
                w.shape()
            ));
        }
        let (Some(oh), Some(ow)) = (output_size(h, kh, spec), output_size(wd, kw, spec)) else {
            return shape_err(format!(
                "kernel {kh}x{kw} with {spec:?} does not fit input {h}x{wd}"
            ));
        };
        Ok(Geometry {
            n,
            c,
            h,
            w: wd,
            cout,
            kh,
            kw,
            oh,
            ow,
            stride: spec.stride,
            pad: spec.padding,
        })
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, col: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &Geometry, dx: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of an NCHW batch with a `[cout, cin, kh, kw]` kernel.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = Geometry::new(x, weight, spec)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return shape_err(format!("bias has {} entries, expected {}", b.len(), g.cout));
        }
    }
    let (rows, p) = (g.rows(), g.cols());
    let mut y = Tensor::zeros(&[g.n, g.cout, g.oh, g.ow]);
    let mut col = if g.pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * p]
    };
    let out = y.data_mut();
    for i in 0..g.n {
        let xs = x.sample(i);
        let lowered: &[T] = if g.pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut col);
            &col
        };
        let ys = &mut out[i * g.cout * p..(i + 1) * g.cout * p];
        matmul(weight.data(), false, lowered, false, ys, g.cout, rows, p, T::one(), T::zero());
        if let Some(b) = bias {
            for (o, &bv) in b.data().iter().enumerate() {
                for v in &mut ys[o * p..(o + 1) * p] {
                    *v += bv;
                }
            }
        }
    }
    Ok(y)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    spec: ConvSpec,
    dy: &Tensor<T>,
    need_input: bool,
    has_bias: bool,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(x, weight, spec)?;
    let (rows, p) = (g.rows(), g.cols());
    if dy.shape() != [g.n, g.cout, g.oh, g.ow] {
        return shape_err(format!("conv output grad has shape {:?}", dy.shape()));
    }
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = has_bias.then(|| Tensor::zeros(&[g.cout]));
    let mut dx = need_input.then(|| Tensor::zeros(x.shape()));
    let mut col = if g.pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * p]
    };
    let mut dcol = if need_input && !g.pointwise() {
        vec![T::zero(); rows * p]
    } else {
        Vec::new()
    };
    let sample_len = g.c * g.h * g.w;
    for i in 0..g.n {
        let xs = x.sample(i);
        let dys = dy.sample(i);
        let lowered: &[T] = if g.pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut col);
            &col
        };
        matmul(dys, false, lowered, true, dw.data_mut(), g.cout, p, rows, T::one(), T::one());
        if let Some(db) = db.as_mut() {
            for (o, acc) in db.data_mut().iter_mut().enumerate() {
                *acc += dys[o * p..(o + 1) * p].iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx.data_mut()[i * sample_len..(i + 1) * sample_len];
            if g.pointwise() {
                matmul(weight.data(), true, dys, false, dxs, rows, g.cout, p, T::one(), T::zero());
            } else {
                matmul(weight.data(), true, dys, false, &mut dcol, rows, g.cout, p, T::one(), T::zero());
                col2im(&dcol, &g, dxs);
            }
        }
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}
