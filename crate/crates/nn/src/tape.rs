use std::collections::BTreeMap;
use std::ops::Deref;

use crate::error::{shape_err, NnError, Result};
use crate::ops::conv::{conv2d_backward, conv2d_forward, ConvSpec};
use crate::ops::{basic, norm, pool};
use crate::param::{Param, ParamId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'a, T> {
    Owned(Tensor<T>),
    Borrowed(&'a Tensor<T>),
}

impl<T> Deref for Value<'_, T> {
    type Target = Tensor<T>;

    fn deref(&self) -> &Tensor<T> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op<T> {
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu(Var),
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    AvgPool {
        x: Var,
        k: usize,
    },
    GlobalAvgPool(Var),
    Add(Var, Var),
    Concat(Vec<Var>),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Softmax(Var),
    CrossEntropy {
        p: Var,
        targets: Vec<usize>,
        eps: T,
    },
    SumSquares(Vec<Var>),
    Scale(Var, T),
}

struct Node<'a, T> {
    value: Value<'a, T>,
    op: Option<Op<T>>,
    param: Option<ParamId>,
    requires_grad: bool,
}

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<T>,
    pub batch_var_unbiased: Vec<T>,
    pub momentum: T,
}

/// Parameter gradients keyed by [`ParamId`].
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    map: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.map.get(&id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.map.iter().map(|(&k, v)| (k, v))
    }

    fn accumulate(&mut self, id: ParamId, g: Tensor<T>) {
        match self.map.get_mut(&id) {
            Some(acc) => acc.add_assign(&g),
            None => {
                self.map.insert(id, g);
            }
        }
    }
}

/// Records a forward computation so it can be differentiated.
///
/// A tape created with [`Tape::inference`] skips all bookkeeping needed for
/// the backward pass. Parameters are borrowed, never copied.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    record: bool,
    bn_updates: Vec<BnUpdate<T>>,
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    /// Tape that records everything needed for [`Tape::backward`].
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            record: true,
            bn_updates: Vec::new(),
        }
    }

    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            record: false,
            bn_updates: Vec::new(),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: None,
            param: None,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, p: &'a Param<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(&p.value),
            op: None,
            param: Some(p.id),
            requires_grad: self.record && p.kind.is_trainable(),
        });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, inputs: &[Var]) -> bool {
        self.record && inputs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: impl FnOnce() -> Op<T>) -> Var {
        let requires_grad = self.needs_grad(inputs);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: requires_grad.then(op),
            param: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let y = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, &inputs, || Op::Conv2d { x, w, b, spec }))
    }

    /// Batch norm using the statistics of this batch.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, norm::ChannelStats<T>)> {
        let stats = norm::channel_stats(self.value(x), eps)?;
        let y = norm::batch_norm_apply(self.value(x), self.value(gamma), self.value(beta), &stats.mean, &stats.inv_std)?;
        let (mean, inv_std) = (stats.mean.clone(), stats.inv_std.clone());
        let v = self.push(y, &[x, gamma, beta], || Op::BatchNorm {
            x,
            gamma,
            beta,
            mean,
            inv_std,
            batch_stats: true,
        });
        Ok((v, stats))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        eps: T,
    ) -> Result<Var> {
        let mean = running_mean.data().to_vec();
        let inv_std: Vec<T> = running_var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let y = norm::batch_norm_apply(self.value(x), self.value(gamma), self.value(beta), &mean, &inv_std)?;
        Ok(self.push(y, &[x, gamma, beta], || Op::BatchNorm {
            x,
            gamma,
            beta,
            mean,
            inv_std,
            batch_stats: false,
        }))
    }

    pub fn push_bn_update(&mut self, update: BnUpdate<T>) {
        self.bn_updates.push(update);
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate<T>> {
        std::mem::take(&mut self.bn_updates)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = basic::relu(self.value(x));
        self.push(y, &[x], || Op::Relu(x))
    }

    pub fn max_pool2d(&mut self, x: Var, kernel: usize, spec: ConvSpec) -> Result<Var> {
        let (y, argmax) = pool::max_pool_forward(self.value(x), kernel, spec)?;
        Ok(self.push(y, &[x], || Op::MaxPool { x, argmax }))
    }

    pub fn avg_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let y = pool::avg_pool_forward(self.value(x), k)?;
        Ok(self.push(y, &[x], || Op::AvgPool { x, k }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = pool::global_avg_pool_forward(self.value(x))?;
        Ok(self.push(y, &[x], || Op::GlobalAvgPool(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = basic::add(self.value(a), self.value(b))?;
        Ok(self.push(y, &[a, b], || Op::Add(a, b)))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let y = basic::concat_channels(&tensors)?;
        let owned = parts.to_vec();
        Ok(self.push(y, parts, || Op::Concat(owned)))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = basic::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, &inputs, || Op::Linear { x, w, b }))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let y = basic::softmax(self.value(x))?;
        Ok(self.push(y, &[x], || Op::Softmax(x)))
    }

    /// Mean categorical cross-entropy of probability rows against class indices.
    pub fn cross_entropy(&mut self, p: Var, targets: &[usize], eps: T) -> Result<Var> {
        let l = basic::cross_entropy(self.value(p), targets, eps)?;
        let targets = targets.to_vec();
        Ok(self.push(Tensor::scalar(l), &[p], || Op::CrossEntropy { p, targets, eps }))
    }

    /// Sum of squares of every element of every input.
    pub fn sum_squares(&mut self, xs: &[Var]) -> Var {
        let s: T = xs
            .iter()
            .map(|&v| self.value(v).data().iter().map(|&e| e * e).sum::<T>())
            .sum();
        let owned = xs.to_vec();
        self.push(Tensor::scalar(s), xs, || Op::SumSquares(owned))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let y = self.value(x).map(|v| v * c);
        self.push(y, &[x], || Op::Scale(x, c))
    }

    /// Reverse-mode sweep from a scalar `loss`, returning gradients of all
    /// trainable parameters that influenced it.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.record {
            return Err(NnError::NotRecording);
        }
        let seed = self.value(loss);
        if seed.len() != 1 {
            return shape_err(format!("backward needs a scalar, got shape {:?}", seed.shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(seed.shape(), T::one()));
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Some(id) = node.param {
                out.accumulate(id, g);
                continue;
            }
            if let Some(op) = &node.op {
                self.backprop(op, node, g, &mut grads)?;
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, op: &Op<T>, node: &Node<'a, T>, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match op {
            Op::Conv2d { x, w, b, spec } => {
                let cg = conv2d_backward(self.value(*x), self.value(*w), *spec, &g, self.wants(*x), b.is_some())?;
                if let Some(dx) = cg.input {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, cg.weight);
                if let (Some(b), Some(db)) = (b, cg.bias) {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            } => {
                let ng = norm::batch_norm_backward(self.value(*x), self.value(*gamma), mean, inv_std, &g, *batch_stats)?;
                self.accumulate(grads, *x, ng.input);
                self.accumulate(grads, *gamma, ng.gamma);
                self.accumulate(grads, *beta, ng.beta);
            }
            Op::Relu(x) => {
                let dx = basic::relu_backward(&node.value, &g);
                self.accumulate(grads, *x, dx);
            }
            Op::MaxPool { x, argmax } => {
                let dx = pool::max_pool_backward(self.value(*x).shape(), argmax, &g)?;
                self.accumulate(grads, *x, dx);
            }
            Op::AvgPool { x, k } => {
                let dx = pool::avg_pool_backward(self.value(*x).shape(), *k, &g)?;
                self.accumulate(grads, *x, dx);
            }
            Op::GlobalAvgPool(x) => {
                let dx = pool::global_avg_pool_backward(self.value(*x).shape(), &g)?;
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g);
            }
            Op::Concat(parts) => {
                let channels: Vec<usize> = parts.iter().map(|v| self.value(*v).shape()[1]).collect();
                for (v, dp) in parts.iter().zip(basic::split_channels(&g, &channels)?) {
                    self.accumulate(grads, *v, dp);
                }
            }
            Op::Linear { x, w, b } => {
                let lg = basic::linear_backward(self.value(*x), self.value(*w), &g)?;
                self.accumulate(grads, *x, lg.input);
                self.accumulate(grads, *w, lg.weight);
                if let Some(b) = b {
                    self.accumulate(grads, *b, lg.bias);
                }
            }
            Op::Softmax(x) => {
                let dx = basic::softmax_backward(&node.value, &g)?;
                self.accumulate(grads, *x, dx);
            }
            Op::CrossEntropy { p, targets, eps } => {
                let dp = basic::cross_entropy_backward(self.value(*p), targets, *eps, g.data()[0])?;
                self.accumulate(grads, *p, dp);
            }
            Op::SumSquares(xs) => {
                let two_g = g.data()[0] + g.data()[0];
                for &x in xs {
                    let dx = self.value(x).map(|v| v * two_g);
                    self.accumulate(grads, x, dx);
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.accumulate(grads, *x, g.map(|v| v * c));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::{ParamInit, ParamKind};

    #[test]
    fn inference_tape_refuses_backward() {
        let mut tape = Tape::<f64>::inference();
        let x = tape.input(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(x), Err(NnError::NotRecording)));
    }

    #[test]
    fn linear_softmax_cross_entropy_gradient() {
        let mut init = ParamInit::new(3);
        let w: Param<f64> = init.kernel("w".into(), &[3, 4], 4);
        let b: Param<f64> = init.constant("b".into(), ParamKind::Bias, &[3], 0.1);
        let x = Tensor::from_vec(&[2, 4], vec![0.5, -1.0, 2.0, 0.1, 1.0, 0.3, -0.7, 0.2]).unwrap();
        let targets = [2usize, 0];
        let loss_of = |w: &Param<f64>, b: &Param<f64>| -> f64 {
            let mut t = Tape::inference();
            let xi = t.input(x.clone());
            let (wv, bv) = (t.param(w), t.param(b));
            let z = t.linear(xi, wv, Some(bv)).unwrap();
            let p = t.softmax(z).unwrap();
            let l = t.cross_entropy(p, &targets, 1e-12).unwrap();
            let r = t.sum_squares(&[wv]);
            let r = t.scale(r, 0.01);
            let l = t.add(l, r).unwrap();
            t.value(l).data()[0]
        };
        let mut t = Tape::new();
        let xi = t.input(x.clone());
        let (wv, bv) = (t.param(&w), t.param(&b));
        let z = t.linear(xi, wv, Some(bv)).unwrap();
        let p = t.softmax(z).unwrap();
        let l = t.cross_entropy(p, &targets, 1e-12).unwrap();
        let r = t.sum_squares(&[wv]);
        let r = t.scale(r, 0.01);
        let l = t.add(l, r).unwrap();
        let grads = t.backward(l).unwrap();
        let gw = grads.get(w.id).unwrap();
        for i in 0..w.value.len() {
            let h = 1e-6;
            let mut wp = w.clone();
            wp.value.data_mut()[i] += h;
            let mut wm = w.clone();
            wm.value.data_mut()[i] -= h;
            let fd = (loss_of(&wp, &b) - loss_of(&wm, &b)) / (2.0 * h);
            assert!((fd - gw.data()[i]).abs() < 1e-8);
        }
        assert_eq!(grads.get(b.id).unwrap().len(), 3);
    }

    #[test]
    fn running_stats_are_not_differentiated() {
        let mut init = ParamInit::new(0);
        let rm: Param<f32> = init.constant("rm".into(), ParamKind::RunningMean, &[2], 0.0);
        let mut t = Tape::new();
        let v = t.param(&rm);
        let s = t.sum_squares(&[v]);
        assert!(t.backward(s).unwrap().is_empty());
    }
}
