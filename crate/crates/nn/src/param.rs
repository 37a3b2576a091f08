use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Identifier of a parameter, unique within one model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution or fully-connected weight; the only kind subject to L2.
    Kernel,
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    pub fn is_decayed(self) -> bool {
        self == ParamKind::Kernel
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub id: ParamId,
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// Read and write access to every parameter (and normalization buffer) of a module.
pub trait Parameters<T: Scalar> {
    fn visit<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(p));
        out
    }

    /// Number of trainable scalars.
    fn trainable_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.kind.is_trainable() {
                n += p.value.len()
            }
        });
        n
    }
}

/// Allocates parameter ids and draws initial values from a seeded stream.
pub struct ParamInit {
    rng: ChaCha8Rng,
    next_id: u32,
}

impl ParamInit {
    pub fn new(seed: u64) -> Self {
        ParamInit {
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_id: 0,
        }
    }

    /// Like [`ParamInit::new`] but numbering ids from `first_id`, so that
    /// layers added to an existing model get fresh ids.
    pub fn with_first_id(seed: u64, first_id: u32) -> Self {
        ParamInit {
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_id: first_id,
        }
    }

    /// Id the next parameter will receive.
    pub fn next_id(&self) -> u32 {
        self.next_id
    }

    fn make<T: Scalar>(&mut self, name: String, kind: ParamKind, value: Tensor<T>) -> Param<T> {
        let id = ParamId(self.next_id);
        self.next_id += 1;
        Param { id, name, kind, value }
    }

    /// Fan-in scaled normal kernel: `N(0, 2 / fan_in)`.
    pub fn kernel<T: Scalar>(&mut self, name: String, shape: &[usize], fan_in: usize) -> Param<T> {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(self.rng.sample::<f64, _>(StandardNormal) * std))
            .collect();
        let value = Tensor::from_vec(shape, data).expect("length matches shape");
        self.make(name, ParamKind::Kernel, value)
    }

    pub fn constant<T: Scalar>(&mut self, name: String, kind: ParamKind, shape: &[usize], value: f64) -> Param<T> {
        self.make(name, kind, Tensor::full(shape, T::lit(value)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_sequential_and_init_is_seeded() {
        let mut a = ParamInit::new(7);
        let mut b = ParamInit::new(7);
        let p: Param<f32> = a.kernel("w".into(), &[8, 4], 4);
        let q: Param<f32> = b.kernel("w".into(), &[8, 4], 4);
        assert_eq!(p.value, q.value);
        let r: Param<f32> = a.constant("b".into(), ParamKind::Bias, &[8], 0.0);
        assert_eq!((p.id, r.id), (ParamId(0), ParamId(1)));
    }

    #[test]
    fn kernel_scale_follows_fan_in() {
        let mut init = ParamInit::new(1);
        let p: Param<f64> = init.kernel("w".into(), &[200, 50], 50);
        let var = p.value.data().iter().map(|v| v * v).sum::<f64>() / p.value.len() as f64;
        assert!((var - 2.0 / 50.0).abs() < 0.004, "{var}");
    }
}
