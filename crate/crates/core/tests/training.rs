mod common;

use cxrfuse::datasets::{Fold, SplitPlan};
use cxrfuse::error::Error;
use cxrfuse::metrics::mean_sd;
use cxrfuse::model::Network;
use cxrfuse::preprocess::AugmentationSpec;
use cxrfuse::training::{
    cross_validate, fit, predict_proba, ConstantStub, FoldTrainer, NoisyOracleStub, PreparedSet, TrainConfig,
};
use cxrfuse::{FusionModel, FusionModelConfig};
use cxrfuse_nn::{Mode, Parameters, Tape, Tensor};

fn tiny(seed: u64) -> FusionModel<f32> {
    FusionModel::new(&FusionModelConfig::tiny(4), seed).unwrap()
}

fn snapshot(model: &impl Parameters<f32>) -> Vec<(String, Tensor<f32>)> {
    model.params().into_iter().map(|p| (p.name.clone(), p.value.clone())).collect()
}

fn short(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn same_seed_gives_identical_histories_and_weights() {
    let data = common::pattern_set(3, 64, 2);
    let (mut a, mut b) = (tiny(5), tiny(5));
    let ha = fit(&mut a, &data, &short(2)).unwrap();
    let hb = fit(&mut b, &data, &short(2)).unwrap();
    assert_eq!(ha.len(), 2);
    assert_eq!(ha.without_timing(), hb.without_timing());
    assert_eq!(snapshot(&a), snapshot(&b));
    assert!(ha.epochs.iter().all(|r| r.loss.is_finite()));
}

#[test]
fn zero_learning_rate_leaves_trainable_parameters_unchanged() {
    let data = common::pattern_set(2, 64, 3);
    let mut model = tiny(6);
    let before = snapshot(&model);
    let config = TrainConfig {
        learning_rate: 0.0,
        ..short(2)
    };
    fit(&mut model, &data, &config).unwrap();
    let kinds: Vec<_> = model.params().into_iter().map(|p| p.kind).collect();
    for ((name, old), ((_, new), kind)) in before.iter().zip(snapshot(&model).iter().zip(kinds)) {
        if kind.is_trainable() {
            assert_eq!(old, new, "{name} moved");
        }
    }
}

#[test]
fn frozen_backbones_do_not_move() {
    let data = common::pattern_set(2, 64, 4);
    let mut model = tiny(7);
    let before = snapshot(&model);
    let config = TrainConfig {
        freeze_backbones: true,
        augmentation: AugmentationSpec::none(),
        ..short(1)
    };
    fit(&mut model, &data, &config).unwrap();
    let after = snapshot(&model);
    let (mut head_moved, mut checked) = (false, 0);
    for ((name, old), (_, new)) in before.iter().zip(&after) {
        let trainable_backbone = (name.starts_with("resnet.") || name.starts_with("densenet."))
            && !name.ends_with("running_mean")
            && !name.ends_with("running_var");
        if trainable_backbone {
            assert_eq!(old, new, "{name} moved");
            checked += 1;
        } else if name.starts_with("head.") && old != new {
            head_moved = true;
        }
    }
    assert!(checked > 100 && head_moved);
}

/// With momentum 0 and a tiny learning rate, one step on a fixed batch
/// lowers that batch's loss.
#[test]
fn one_small_step_decreases_the_batch_loss() {
    let data = common::pattern_set(2, 64, 5);
    let mut model = FusionModel::<f64>::new(&FusionModelConfig::tiny(4), 8).unwrap();
    let images: Vec<_> = data.images.iter().collect();
    let x = cxrfuse::preprocess::stack_batch(&images).unwrap().cast::<f64>();
    let loss_of = |m: &FusionModel<f64>| {
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let p = m.forward_probs(&mut tape, xv, Mode::Train).unwrap();
        let l = tape.cross_entropy(p, &data.labels, 1e-12).unwrap();
        let g = tape.backward(l).unwrap();
        (tape.value(l).data()[0], g)
    };
    let (before, grads) = loss_of(&model);
    let mut sgd = cxrfuse_nn::Sgd::new(1e-5, 0.0);
    sgd.step(&mut model, &grads, &|_| true);
    let (after, _) = loss_of(&model);
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn non_finite_loss_aborts_with_location() {
    let data = common::pattern_set(2, 64, 6);
    let mut model = tiny(9);
    model.fc2.weight.value.data_mut()[0] = f32::NAN;
    match fit(&mut model, &data, &short(1)) {
        Err(Error::Numeric(msg)) => {
            assert!(msg.contains("epoch 1") && msg.contains("batch 1") && msg.contains("0.001"), "{msg}")
        }
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

#[test]
fn mismatched_class_count_is_a_config_error() {
    let data = common::pattern_set(1, 64, 7);
    let mut model = FusionModel::<f32>::new(&FusionModelConfig::tiny(3), 1).unwrap();
    assert!(matches!(fit(&mut model, &data, &short(1)), Err(Error::Config(_))));
}

#[test]
fn predictions_are_probability_rows() {
    let data = common::pattern_set(2, 64, 8);
    let probs = predict_proba(&tiny(3), &data, 3).unwrap();
    assert_eq!(probs.len(), 8);
    for row in probs {
        assert_eq!(row.len(), 4);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    }
}

fn label_set(n: usize) -> PreparedSet {
    let base = common::pattern_set(n.div_ceil(4), 8, 1);
    let ids: Vec<String> = base.ids[..n].to_vec();
    PreparedSet {
        images: Vec::new(),
        ..base.select(&ids).unwrap()
    }
}

fn plan(data: &PreparedSet, folds: usize) -> SplitPlan {
    let folds = (0..folds)
        .map(|k| {
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (i, id) in data.ids.iter().enumerate() {
                if (i + k) % 3 == 0 { &mut test } else { &mut train }.push(id.clone());
            }
            Fold { train, test }
        })
        .collect();
    SplitPlan {
        folds,
        train_fraction: 0.7,
        seed: 0,
    }
}

#[test]
fn fold_order_and_parallelism_do_not_change_results() {
    let data = label_set(40);
    let stub = NoisyOracleStub {
        accuracy: 0.7,
        seed: 3,
    };
    let p = plan(&data, 4);
    let serial = cross_validate(&data, &p, &stub, 1).unwrap();
    let parallel = cross_validate(&data, &p, &stub, 4).unwrap();
    let mut reversed = p.clone();
    reversed.folds.reverse();
    let backwards = cross_validate(&data, &reversed, &stub, 1).unwrap();
    for k in 0..4 {
        assert_eq!(serial.folds[k].report, parallel.folds[k].report);
        assert_eq!(serial.folds[k].report, backwards.folds[3 - k].report);
    }
}

#[test]
fn single_fold_has_zero_spread() {
    let data = label_set(20);
    let cv = cross_validate(&data, &plan(&data, 1), &ConstantStub, 1).unwrap();
    for row in &cv.summary.rows {
        assert_eq!(row.sd, 0.0);
        assert_eq!(row.mean, row.per_fold[0]);
    }
}

#[test]
fn constant_stub_scores_the_majority_frequency() {
    let data = label_set(40);
    let p = plan(&data, 4);
    let cv = cross_validate(&data, &p, &ConstantStub, 1).unwrap();
    for (fold, result) in p.folds.iter().zip(&cv.folds) {
        let train = data.select(&fold.train).unwrap();
        let test = data.select(&fold.test).unwrap();
        let majority = ConstantStub.run_fold(0, &train, &test).unwrap().probabilities[0]
            .iter()
            .position(|&v| v == 1.0)
            .unwrap();
        let freq = test.labels.iter().filter(|&&l| l == majority).count() as f64 / test.len() as f64;
        assert_eq!(result.report.accuracy, freq);
        assert_eq!(result.report.aggregates.f1.micro, freq);
    }
    let micro: Vec<f64> = cv.folds.iter().map(|f| f.report.aggregates.f1.micro).collect();
    let (m, _) = mean_sd(&micro);
    assert!((m - 0.25).abs() < 0.2, "balanced data, majority guess near chance: {m}");
}

#[test]
fn fold_failures_name_the_fold() {
    let data = label_set(12);
    let mut p = plan(&data, 2);
    p.folds[1].test.push("no/such/id".into());
    match cross_validate(&data, &p, &ConstantStub, 1) {
        Err(Error::Fold { fold: 2, .. }) => {}
        other => panic!("expected fold 2 error, got {other:?}"),
    }
}
