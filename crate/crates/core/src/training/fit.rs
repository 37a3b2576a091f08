use std::collections::HashSet;
use std::time::Instant;

use cxrfuse_nn::optim::apply_bn_updates;
use cxrfuse_nn::{Mode, ParamId, Sgd, Tape, Tensor, Var};
use rand::seq::SliceRandom;

use super::{EpochRecord, PreparedSet, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::metrics::{argmax, MetricsReport};
use crate::model::Network;
use crate::preprocess::{augment, stack_batch, zca_whiten, GrayImage};
use crate::seed::rng_for;

/// Clamp inside the logarithm of the cross-entropy.
pub const LOSS_EPSILON: f64 = 1e-12;

fn check_compatible<M: Network<f32> + ?Sized>(model: &M, data: &PreparedSet) -> Result<()> {
    if model.num_classes() != data.classes.len() {
        return Err(Error::Config(format!(
            "model has {} outputs but the data has {} classes",
            model.num_classes(),
            data.classes.len()
        )));
    }
    if !data.has_images() {
        return Err(Error::Input("the sample set carries labels only, no images".into()));
    }
    if let Some(size) = data.image_size() {
        if size != model.input_size() {
            return Err(Error::Shape(format!(
                "images are {size} px but the model expects {} px",
                model.input_size()
            )));
        }
    }
    Ok(())
}

/// Trains `model` in place with mini-batch SGD and returns the per-epoch history.
///
/// Batches are reshuffled every epoch from `(seed, epoch)`; augmentation
/// draws come from `(seed, epoch, sample id)`, so results do not depend on
/// batch composition or thread count.
pub fn fit<M: Network<f32> + ?Sized>(model: &mut M, data: &PreparedSet, config: &TrainConfig) -> Result<TrainHistory> {
    config.validate()?;
    check_compatible(model, data)?;
    if data.is_empty() {
        return Err(Error::Input("cannot train on an empty set".into()));
    }
    let spec = config.augmentation.scaled_to(model.input_size());
    let mut frozen = HashSet::new();
    if config.freeze_backbones {
        model.visit_backbones(&mut |p| {
            frozen.insert(p.id);
        });
    }
    let trains = |id: ParamId| !frozen.contains(&id);
    let mut sgd = Sgd::new(config.learning_rate as f32, config.momentum as f32);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut rng_for(config.seed, &format!("shuffle/epoch{epoch}")));
        let (mut loss_sum, mut correct, mut batches) = (0.0, 0usize, 0usize);

        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut images: Vec<GrayImage> = chunk
                .iter()
                .map(|&i| {
                    let mut rng = rng_for(config.seed, &format!("augment/{epoch}/{}", data.ids[i]));
                    augment(&data.images[i], &spec, &mut rng)
                })
                .collect();
            if spec.zca_whitening {
                images = zca_whiten(&images, spec.zca_epsilon)?;
            }
            let x = stack_batch(&images.iter().collect::<Vec<_>>())?;
            let targets: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();

            let (loss, hits, grads, updates) = {
                let mut tape = Tape::new();
                let xv = tape.input(x);
                let probs = model.forward_probs(&mut tape, xv, Mode::Train)?;
                let mut total = tape.cross_entropy(probs, &targets, LOSS_EPSILON as f32)?;
                if config.l2_coefficient > 0.0 {
                    let kernels: Vec<Var> = model
                        .params()
                        .into_iter()
                        .filter(|p| p.kind.is_decayed() && trains(p.id))
                        .map(|p| tape.param(p))
                        .collect();
                    let ss = tape.sum_squares(&kernels);
                    let penalty = tape.scale(ss, config.l2_coefficient as f32);
                    total = tape.add(total, penalty)?;
                }
                let loss = tape.value(total).data()[0] as f64;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss became {loss} at epoch {epoch}, batch {} (learning rate {})",
                        b + 1,
                        config.learning_rate
                    )));
                }
                let hits = count_hits(tape.value(probs), &targets);
                let grads = tape.backward(total)?;
                (loss, hits, grads, tape.take_bn_updates())
            };
            sgd.step(model, &grads, &|p| trains(p.id));
            apply_bn_updates(model, &updates);
            loss_sum += loss;
            correct += hits;
            batches += 1;
        }

        let record = EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: correct as f64 / data.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.4}, accuracy {:.3}, {:.1}s",
            config.epochs,
            record.loss,
            record.accuracy,
            record.seconds
        );
        history.epochs.push(record);
    }
    Ok(history)
}

fn count_hits(probs: &Tensor<f32>, targets: &[usize]) -> usize {
    let k = probs.shape()[1];
    probs
        .data()
        .chunks(k)
        .zip(targets)
        .filter(|(row, &t)| argmax(&row.iter().map(|&v| v as f64).collect::<Vec<_>>()) == t)
        .count()
}

/// Inference-mode class probabilities, one row per sample.
pub fn predict_proba<M: Network<f32> + ?Sized>(model: &M, data: &PreparedSet, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    check_compatible(model, data)?;
    let k = model.num_classes();
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.images.chunks(batch_size.max(1)) {
        let x = stack_batch(&chunk.iter().collect::<Vec<_>>())?;
        let p = model.predict(&x)?;
        out.extend(p.data().chunks(k).map(|r| r.iter().map(|&v| v as f64).collect::<Vec<_>>()));
    }
    Ok(out)
}

/// Predicts every sample and scores the predictions.
pub fn evaluate<M: Network<f32> + ?Sized>(model: &M, data: &PreparedSet, batch_size: usize) -> Result<MetricsReport> {
    let probs = predict_proba(model, data, batch_size)?;
    MetricsReport::from_probabilities(&probs, &data.labels, &data.classes)
}
