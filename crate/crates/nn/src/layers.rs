//! Parameterized building blocks. Names follow the `<prefix>.weight` /
//! `<prefix>.bias` / `<prefix>.running_mean` convention used by common
//! pretrained checkpoints.

use crate::error::Result;
use crate::ops::conv::ConvSpec;
use crate::param::{Param, ParamInit, ParamKind, Parameters};
use crate::scalar::Scalar;
use crate::tape::{BnUpdate, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers, running averages updated.
    Train,
    /// Running statistics, no side effects.
    Eval,
}

#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub spec: ConvSpec,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut ParamInit,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        let weight = init.kernel(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            in_channels * kernel * kernel,
        );
        let bias = bias.then(|| init.constant(format!("{name}.bias"), ParamKind::Bias, &[out_channels], 0.0));
        Conv2d {
            weight,
            bias,
            spec: ConvSpec::new(stride, padding),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = self.bias.as_ref().map(|b| tape.param(b));
        tape.conv2d(x, w, b, self.spec)
    }
}

impl<T: Scalar> Parameters<T> for Conv2d<T> {
    fn visit<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(init: &mut ParamInit, name: &str, channels: usize) -> Self {
        BatchNorm2d {
            weight: init.constant(format!("{name}.weight"), ParamKind::NormScale, &[channels], 1.0),
            bias: init.constant(format!("{name}.bias"), ParamKind::NormShift, &[channels], 0.0),
            running_mean: init.constant(format!("{name}.running_mean"), ParamKind::RunningMean, &[channels], 0.0),
            running_var: init.constant(format!("{name}.running_var"), ParamKind::RunningVar, &[channels], 1.0),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = tape.param(&self.weight);
        let beta = tape.param(&self.bias);
        let eps = T::lit(self.eps);
        match mode {
            Mode::Eval => tape.batch_norm_eval(x, gamma, beta, &self.running_mean.value, &self.running_var.value, eps),
            Mode::Train => {
                let (y, stats) = tape.batch_norm_train(x, gamma, beta, eps)?;
                let n = stats.count;
                let unbias = if n > 1 {
                    T::from_usize(n).unwrap() / T::from_usize(n - 1).unwrap()
                } else {
                    T::one()
                };
                tape.push_bn_update(BnUpdate {
                    running_mean: self.running_mean.id,
                    running_var: self.running_var.id,
                    batch_mean: stats.mean,
                    batch_var_unbiased: stats.var.iter().map(|&v| v * unbias).collect(),
                    momentum: T::lit(self.momentum),
                });
                Ok(y)
            }
        }
    }
}

impl<T: Scalar> Parameters<T> for BatchNorm2d<T> {
    fn visit<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>)) {
        f(&self.weight);
        f(&self.bias);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(init: &mut ParamInit, name: &str, in_features: usize, out_features: usize) -> Self {
        Linear {
            weight: init.kernel(format!("{name}.weight"), &[out_features, in_features], in_features),
            bias: init.constant(format!("{name}.bias"), ParamKind::Bias, &[out_features], 0.0),
        }
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        tape.linear(x, w, Some(b))
    }
}

impl<T: Scalar> Parameters<T> for Linear<T> {
    fn visit<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

impl<T: Scalar, P: Parameters<T>> Parameters<T> for Vec<P> {
    fn visit<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>)) {
        for p in self {
            p.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for p in self {
            p.visit_mut(f);
        }
    }
}

impl<T: Scalar, P: Parameters<T>> Parameters<T> for Option<P> {
    fn visit<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>)) {
        if let Some(p) = self {
            p.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        if let Some(p) = self {
            p.visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn train_mode_batch_norm_reports_running_updates() {
        let mut init = ParamInit::new(0);
        let bn: BatchNorm2d<f64> = BatchNorm2d::new(&mut init, "bn", 2);
        let x = Tensor::from_vec(&[2, 2, 1, 1], vec![1.0, 10.0, 3.0, 20.0]).unwrap();
        let mut tape = Tape::new();
        let xi = tape.input(x);
        bn.forward(&mut tape, xi, Mode::Train).unwrap();
        let ups = tape.take_bn_updates();
        assert_eq!(ups.len(), 1);
        assert_eq!(ups[0].batch_mean, vec![2.0, 15.0]);
        // unbiased variance of {1, 3} and {10, 20}
        assert_eq!(ups[0].batch_var_unbiased, vec![2.0, 50.0]);
    }

    #[test]
    fn eval_mode_with_default_stats_is_nearly_identity() {
        let mut init = ParamInit::new(0);
        let bn: BatchNorm2d<f64> = BatchNorm2d::new(&mut init, "bn", 1);
        let mut tape = Tape::inference();
        let xi = tape.input(Tensor::from_vec(&[1, 1, 1, 2], vec![2.0, -4.0]).unwrap());
        let y = bn.forward(&mut tape, xi, Mode::Eval).unwrap();
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert_eq!(tape.value(y).data(), &[2.0 * s, -4.0 * s]);
    }
}
