//! Standalone backbone baselines: global average pool over the last tap,
//! then a single fully-connected softmax layer.

use cxrfuse_nn::{Linear, Mode, Param, ParamInit, Parameters, Scalar, Tape, Var};

use super::{join, Backbone, BackboneConfig, BackboneKind};
use crate::error::{config, Result};
use crate::model::{fresh_init, Network};

#[derive(Clone, Debug)]
pub struct BackboneClassifier<T> {
    pub backbone: Backbone<T>,
    /// Named `fc` for ResNet and `classifier` for DenseNet, as in the
    /// reference checkpoints.
    pub head: Linear<T>,
}

/// Appends a `num_classes`-way head to `backbone`; `seed` drives its init.
pub fn backbone_classifier<T: Scalar>(backbone: Backbone<T>, num_classes: usize, seed: u64) -> Result<BackboneClassifier<T>> {
    if num_classes < 2 {
        return config(format!("num_classes must be at least 2, got {num_classes}"));
    }
    let mut init = fresh_init(&backbone, seed);
    let features = backbone.tap_channels()[3];
    let name = match backbone.kind() {
        BackboneKind::Resnet50 => "fc",
        BackboneKind::Densenet121 => "classifier",
    };
    let head = Linear::new(&mut init, &join(backbone.prefix(), name), features, num_classes);
    Ok(BackboneClassifier { backbone, head })
}

impl<T: Scalar> BackboneClassifier<T> {
    pub fn new(config: &BackboneConfig, num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return crate::error::config(format!("num_classes must be at least 2, got {num_classes}"));
        }
        let backbone = Backbone::new(config, &mut ParamInit::new(seed), "")?;
        backbone_classifier(backbone, num_classes, crate::seed::derive_seed(seed, "head"))
    }
}

impl<T: Scalar> Network<T> for BackboneClassifier<T> {
    fn input_size(&self) -> usize {
        self.backbone.config().input_size
    }

    fn num_classes(&self) -> usize {
        self.head.bias.value.len()
    }

    fn forward_probs<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, mode: Mode) -> Result<Var> {
        let taps = self.backbone.forward_taps(tape, x, mode)?;
        let pooled = tape.global_avg_pool(taps[3])?;
        let logits = self.head.forward(tape, pooled)?;
        Ok(tape.softmax(logits)?)
    }

    fn visit_backbones<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>)) {
        self.backbone.visit(f);
    }
}

impl<T: Scalar> Parameters<T> for BackboneClassifier<T> {
    fn visit<'s>(&'s self, f: &mut dyn FnMut(&'s Param<T>)) {
        self.backbone.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.backbone.visit_mut(f);
        self.head.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::build_backbone;
    use cxrfuse_nn::Tensor;

    #[test]
    fn rejects_single_class() {
        let b: Backbone<f32> = build_backbone(&BackboneConfig::tiny(BackboneKind::Resnet50), 0).unwrap();
        assert!(backbone_classifier(b, 1, 0).is_err());
    }

    #[test]
    fn head_ids_do_not_collide() {
        let m: BackboneClassifier<f32> = BackboneClassifier::new(&BackboneConfig::tiny(BackboneKind::Densenet121), 3, 0).unwrap();
        let mut ids: Vec<_> = m.params().iter().map(|p| p.id).collect();
        let n = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), n);
        assert_eq!(m.head.weight.name, "classifier.weight");
    }

    #[test]
    fn tiny_resnet_predicts_valid_class() {
        let m: BackboneClassifier<f32> = BackboneClassifier::new(&BackboneConfig::tiny(BackboneKind::Resnet50), 4, 1).unwrap();
        let x = Tensor::from_vec(&[1, 3, 64, 64], (0..3 * 64 * 64).map(|i| ((i % 97) as f32 / 48.0) - 1.0).collect()).unwrap();
        let p = m.predict(&x).unwrap();
        assert_eq!(p.shape(), &[1, 4]);
        let sum: f32 = p.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        let argmax = p.data().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!(argmax < 4);
    }
}
