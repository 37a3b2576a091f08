use cxrfuse::error::Error;
use cxrfuse::{FusionModel, FusionModelConfig, Network};
use cxrfuse_nn::Tensor;
use rand::Rng;

fn model() -> FusionModel<f32> {
    FusionModel::new(&FusionModelConfig::tiny(4), 11).unwrap()
}

fn batch(n: usize, seed: u64) -> Tensor<f32> {
    let mut rng = cxrfuse::seed::rng_for(seed, "fusion-test");
    let data = (0..n * 3 * 64 * 64).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::from_vec(&[n, 3, 64, 64], data).unwrap()
}

#[test]
fn empty_batch_gives_empty_output() {
    let out = model().predict(&Tensor::zeros(&[0, 3, 64, 64])).unwrap();
    assert_eq!(out.shape(), [0, 4]);
}

#[test]
fn duplicated_inputs_give_identical_rows() {
    let one = batch(1, 1);
    let mut data = one.data().to_vec();
    data.extend_from_slice(one.data());
    let two = Tensor::from_vec(&[2, 3, 64, 64], data).unwrap();
    let p = model().predict(&two).unwrap();
    assert_eq!(p.data()[..4], p.data()[4..]);
    // Batching does not change a sample's output.
    assert_eq!(model().predict(&one).unwrap().data(), &p.data()[..4]);
}

#[test]
fn bad_inputs_are_rejected() {
    let m = model();
    let mut x = batch(1, 2);
    x.data_mut()[17] = f32::NAN;
    assert!(matches!(m.predict(&x), Err(Error::Input(_))));
    assert!(matches!(m.predict(&Tensor::zeros(&[1, 3, 32, 32])), Err(Error::Shape(_))));
    assert!(matches!(m.predict(&Tensor::zeros(&[1, 1, 64, 64])), Err(Error::Shape(_))));
}

#[test]
fn permuting_the_head_permutes_probabilities() {
    let x = batch(3, 3);
    let m = model();
    let before = m.predict(&x).unwrap();
    let perm = [2, 0, 3, 1];
    let mut permuted = m.clone();
    let hidden = m.fc2.weight.value.shape()[1];
    for (new, &old) in perm.iter().enumerate() {
        let row = &m.fc2.weight.value.data()[old * hidden..(old + 1) * hidden];
        permuted.fc2.weight.value.data_mut()[new * hidden..(new + 1) * hidden].copy_from_slice(row);
        permuted.fc2.bias.value.data_mut()[new] = m.fc2.bias.value.data()[old];
    }
    let after = permuted.predict(&x).unwrap();
    for n in 0..3 {
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(after.data()[n * 4 + new], before.data()[n * 4 + old]);
        }
    }
}

#[test]
fn outputs_are_probability_rows() {
    let p = model().predict(&batch(5, 4)).unwrap();
    for row in p.data().chunks(4) {
        let s: f32 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
        assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
