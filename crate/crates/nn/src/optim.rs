use std::collections::HashMap;

use crate::param::{Param, ParamId, ParamKind, Parameters};
use crate::scalar::Scalar;
use crate::tape::{BnUpdate, Gradients};
use crate::tensor::Tensor;

/// Stochastic gradient descent with classical momentum:
/// `v <- momentum * v - lr * g`, `theta <- theta + v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: HashMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: HashMap::new(),
        }
    }

    /// Updates one parameter given its gradient.
    pub fn update(&mut self, p: &mut Param<T>, g: &Tensor<T>) {
        let v = self
            .velocity
            .entry(p.id)
            .or_insert_with(|| Tensor::zeros(p.value.shape()));
        for ((theta, vel), &grad) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vel = self.momentum * *vel - self.lr * grad;
            *theta += *vel;
        }
    }

    /// Applies one step to every trainable parameter accepted by `filter`
    /// that has a gradient.
    pub fn step<M: Parameters<T> + ?Sized>(
        &mut self,
        model: &mut M,
        grads: &Gradients<T>,
        filter: &dyn Fn(&Param<T>) -> bool,
    ) {
        model.visit_mut(&mut |p| {
            if !p.kind.is_trainable() || !filter(p) {
                return;
            }
            if let Some(g) = grads.get(p.id) {
                self.update(p, g);
            }
        });
    }
}

/// Folds batch statistics into running averages:
/// `running <- (1 - momentum) * running + momentum * batch`.
pub fn apply_bn_updates<T: Scalar, M: Parameters<T> + ?Sized>(model: &mut M, updates: &[BnUpdate<T>]) {
    let mut by_id: HashMap<ParamId, (&[T], T)> = HashMap::new();
    for u in updates {
        by_id.insert(u.running_mean, (&u.batch_mean, u.momentum));
        by_id.insert(u.running_var, (&u.batch_var_unbiased, u.momentum));
    }
    model.visit_mut(&mut |p| {
        if !matches!(p.kind, ParamKind::RunningMean | ParamKind::RunningVar) {
            return;
        }
        if let Some((batch, m)) = by_id.get(&p.id) {
            for (r, &b) in p.value.data_mut().iter_mut().zip(batch.iter()) {
                *r = (T::one() - *m) * *r + *m * b;
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::ParamInit;

    #[test]
    fn zero_lr_leaves_parameter_unchanged() {
        let mut init = ParamInit::new(1);
        let mut p: Param<f64> = init.kernel("w".into(), &[3], 1);
        let before = p.value.clone();
        let mut sgd = Sgd::new(0.0, 0.9);
        sgd.update(&mut p, &Tensor::full(&[3], 5.0));
        assert_eq!(p.value, before);
    }
}
