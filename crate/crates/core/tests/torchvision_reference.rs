//! Runs `scripts/convert_torchvision.py` on randomly initialized torchvision
//! models and compares our forward pass against the stored activations.
//! Skipped (with a note) when python3 with torch/torchvision is unavailable.

use std::path::{Path, PathBuf};
use std::process::Command;

use cxrfuse::backbones::{load_params, BackboneClassifier, BackboneConfig, BackboneKind, WeightArchive};
use cxrfuse::{FusionModel, FusionModelConfig, Network};
use cxrfuse_nn::Tensor;

fn torch_available() -> bool {
    Command::new("python3")
        .args(["-c", "import torch, torchvision"])
        .output()
        .is_ok_and(|o| o.status.success())
}

fn convert(kind: BackboneKind, dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scripts/convert_torchvision.py");
    let (weights, reference) = (dir.join(kind.name()), dir.join(format!("{}-ref", kind.name())));
    let out = Command::new("python3")
        .arg(&script)
        .args([kind.name(), weights.to_str().unwrap(), "--random", "7"])
        .args(extra)
        .args(["--reference", reference.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "conversion script failed:\n{}", String::from_utf8_lossy(&out.stderr));
    (weights, reference)
}

fn tensor(a: &WeightArchive, name: &str) -> Tensor<f32> {
    let e = a.get(name).unwrap_or_else(|| panic!("reference lacks {name}"));
    Tensor::from_vec(&e.shape, e.data.clone()).unwrap()
}

/// Largest absolute difference relative to the reference's largest magnitude.
fn rel_err(got: &Tensor<f32>, want: &Tensor<f32>) -> f64 {
    assert_eq!(got.shape(), want.shape());
    let scale = want.data().iter().fold(0.0f64, |m, v| m.max(v.abs() as f64)).max(1e-12);
    let diff = got.data().iter().zip(want.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs() as f64));
    diff / scale
}

fn check_classifier(kind: BackboneKind) {
    if !torch_available() {
        eprintln!("skipping {kind:?} reference check: python3 with torch/torchvision not found");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let (weights, reference) = convert(kind, dir.path(), &["--keep-classifier"]);
    let reference = WeightArchive::load(&reference).unwrap();
    let mut model = BackboneClassifier::<f32>::new(&BackboneConfig::new(kind), 1000, 0).unwrap();
    let loaded = load_params(&mut model, &WeightArchive::load(&weights).unwrap(), "").unwrap();
    assert_eq!(loaded, WeightArchive::load(&weights).unwrap().len());

    let x = tensor(&reference, "input");
    let taps = model.backbone.taps(&x).unwrap();
    for (i, got) in taps.taps.iter().enumerate() {
        let err = rel_err(got, &tensor(&reference, &format!("tap{}", i + 1)));
        assert!(err < 1e-4, "{kind:?} tap {} relative error {err:e}", i + 1);
    }
    let probs = model.predict(&x).unwrap();
    let want = tensor(&reference, "probs");
    let diff = probs.data().iter().zip(want.data()).fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
    assert!(diff < 1e-5, "{kind:?} probability difference {diff:e}");
}

#[test]
fn resnet50_matches_torchvision() {
    check_classifier(BackboneKind::Resnet50);
}

#[test]
fn densenet121_matches_torchvision() {
    check_classifier(BackboneKind::Densenet121);
}

#[test]
fn fusion_model_loads_converted_backbones() {
    if !torch_available() {
        eprintln!("skipping pretrained fusion check: python3 with torch/torchvision not found");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let (r, r_ref) = convert(BackboneKind::Resnet50, dir.path(), &[]);
    let (d, d_ref) = convert(BackboneKind::Densenet121, dir.path(), &[]);
    let config = FusionModelConfig {
        pretrained: true,
        ..FusionModelConfig::default()
    };
    let mut model = FusionModel::<f32>::new(&config, 0).unwrap();
    let (nr, nd) = model
        .load_pretrained_backbones(&WeightArchive::load(&r).unwrap(), &WeightArchive::load(&d).unwrap())
        .unwrap();
    assert_eq!((nr, nd), (265, 604));
    for (backbone, reference) in [(&model.resnet, r_ref), (&model.densenet, d_ref)] {
        let reference = WeightArchive::load(&reference).unwrap();
        let taps = backbone.taps(&tensor(&reference, "input")).unwrap();
        let err = rel_err(&taps.taps[3], &tensor(&reference, "tap4"));
        assert!(err < 1e-4, "relative error {err:e}");
    }
}
