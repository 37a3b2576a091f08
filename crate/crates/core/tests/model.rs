mod common;

use cxrfuse::backbones::{BackboneConfig, BackboneKind};
use cxrfuse::error::Error;
use cxrfuse::training::{fit, predict_proba, TrainConfig};
use cxrfuse::{AnyModel, FusionMode, FusionModelConfig, ModelSpec};

fn briefly_trained(spec: ModelSpec) -> AnyModel {
    let data = common::pattern_set(2, 64, 1);
    let mut model = spec.build(3).unwrap();
    let config = TrainConfig {
        epochs: 1,
        batch_size: 4,
        ..TrainConfig::default()
    };
    fit(&mut model, &data, &config).unwrap();
    model
}

fn assert_roundtrip(spec: ModelSpec) {
    let data = common::pattern_set(1, 64, 2);
    let model = briefly_trained(spec.clone());
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let loaded = AnyModel::load(dir.path()).unwrap();
    assert_eq!(loaded.spec(), spec);
    // Running statistics and weights both come back, so outputs match bit for bit.
    assert_eq!(predict_proba(&model, &data, 4).unwrap(), predict_proba(&loaded, &data, 4).unwrap());
}

#[test]
fn fusion_model_roundtrips() {
    assert_roundtrip(ModelSpec::Fusion(FusionModelConfig::tiny(4)));
}

#[test]
fn project_add_model_roundtrips() {
    assert_roundtrip(ModelSpec::Fusion(FusionModelConfig {
        fusion_mode: FusionMode::ProjectAdd,
        ..FusionModelConfig::tiny(4)
    }));
}

#[test]
fn baselines_roundtrip() {
    for kind in [BackboneKind::Resnet50, BackboneKind::Densenet121] {
        assert_roundtrip(ModelSpec::Baseline {
            backbone: BackboneConfig::tiny(kind),
            num_classes: 4,
        });
    }
}

#[test]
fn config_json_is_tagged() {
    let json = serde_json::to_value(ModelSpec::Fusion(FusionModelConfig::tiny(3))).unwrap();
    assert_eq!(json["architecture"], "fusion");
    let back: ModelSpec = serde_json::from_value(json).unwrap();
    assert_eq!(back, ModelSpec::Fusion(FusionModelConfig::tiny(3)));
}

#[test]
fn unknown_config_field_is_rejected() {
    let model = ModelSpec::Fusion(FusionModelConfig::tiny(4)).build(0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let path = dir.path().join("config.json");
    let mut json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    json["dropout"] = 0.5.into();
    std::fs::write(&path, json.to_string()).unwrap();
    let e = AnyModel::load(dir.path()).unwrap_err();
    assert!(matches!(e, Error::Config(_)), "{e}");
    assert!(e.to_string().contains("dropout"), "{e}");
}

#[test]
fn mismatched_weights_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    ModelSpec::Fusion(FusionModelConfig::tiny(4)).build(0).unwrap().save(dir.path()).unwrap();
    // Same weights, but the config now asks for a different head.
    let spec = ModelSpec::Fusion(FusionModelConfig::tiny(3));
    std::fs::write(dir.path().join("config.json"), serde_json::to_string(&spec).unwrap()).unwrap();
    assert!(AnyModel::load(dir.path()).is_err());
}

#[test]
fn missing_directory_is_an_io_error() {
    let e = AnyModel::load(std::path::Path::new("/nonexistent/model")).unwrap_err();
    assert!(matches!(e, Error::Io { .. }), "{e:?}");
}
