use cxrfuse_nn::ops::basic::softmax;
use cxrfuse_nn::ops::conv::{conv2d_backward, conv2d_forward, output_size};
use cxrfuse_nn::{ConvSpec, ParamInit, Sgd, Tensor};
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// `<conv(x), dy> = <x, conv^T(dy)>` and `<conv(x), dy>` is linear in the
    /// kernel, so its kernel gradient pairs with the kernel the same way.
    #[test]
    fn convolution_backward_is_the_adjoint(
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4, hw in 3usize..8,
        k in prop::sample::select(vec![1usize, 3]), stride in 1usize..3, seed in any::<u64>(),
    ) {
        let spec = ConvSpec::new(stride, k / 2);
        let o = output_size(hw, k, spec).unwrap();
        let mut init = ParamInit::new(seed);
        let x = init.kernel::<f64>("x".into(), &[n, cin, hw, hw], 1).value;
        let w = init.kernel::<f64>("w".into(), &[cout, cin, k, k], 1).value;
        let dy = init.kernel::<f64>("dy".into(), &[n, cout, o, o], 1).value;
        let y = conv2d_forward(&x, &w, None, spec).unwrap();
        let g = conv2d_backward(&x, &w, spec, &dy, true, false).unwrap();
        let lhs = dot(y.data(), dy.data());
        let via_input = dot(x.data(), g.input.unwrap().data());
        let via_weight = dot(w.data(), g.weight.data());
        let tol = 1e-10 * (1.0 + lhs.abs());
        prop_assert!((lhs - via_input).abs() < tol, "{lhs} vs {via_input}");
        prop_assert!((lhs - via_weight).abs() < tol, "{lhs} vs {via_weight}");
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, logits in values(20)) {
        let t = Tensor::from_vec(&[rows, 20 / rows], logits[..rows * (20 / rows)].to_vec()).unwrap();
        let p = softmax(&t).unwrap();
        for row in p.data().chunks(20 / rows) {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    /// Momentum SGD on `f = (a x^2 + b y^2) / 2` against the recurrence
    /// `v <- m v - lr g`, `theta <- theta + v` stepped by hand.
    #[test]
    fn momentum_follows_the_velocity_convention(
        a in 0.1f64..3.0, b in 0.1f64..3.0, lr in 0.0f64..0.5, m in 0.0f64..0.99,
        start in values(2), steps in 1usize..20,
    ) {
        let mut init = ParamInit::new(0);
        let mut p = init.kernel::<f64>("theta".into(), &[2], 1);
        p.value.data_mut().copy_from_slice(&start);
        let mut sgd = Sgd::new(lr, m);
        let (mut theta, mut v) = ([start[0], start[1]], [0.0, 0.0]);
        for _ in 0..steps {
            let g = [a * p.value.data()[0], b * p.value.data()[1]];
            sgd.update(&mut p, &Tensor::from_vec(&[2], g.to_vec()).unwrap());
            let hg = [a * theta[0], b * theta[1]];
            for i in 0..2 {
                v[i] = m * v[i] - lr * hg[i];
                theta[i] += v[i];
            }
            prop_assert_eq!(p.value.data(), &theta[..]);
        }
    }
}
