//! Synthetic fixtures shared by the integration tests.
#![allow(dead_code)]

use cxrfuse::datasets::VOCABULARY;
use cxrfuse::preprocess::{GrayImage, PreprocessConfig};
use cxrfuse::seed::rng_for;
use cxrfuse::training::PreparedSet;
use rand::Rng;

/// One of four geometric patterns with a random phase and mild noise:
/// horizontal stripes, vertical stripes, a centered disk, a checkerboard.
pub fn pattern(class: usize, size: usize, rng: &mut impl Rng) -> GrayImage {
    let period = (size / 8).max(2);
    let phase = rng.random_range(0..period);
    let radius = size as f64 * rng.random_range(0.25..0.35);
    let c = (size as f64 - 1.0) / 2.0;
    let noise: Vec<f32> = (0..size * size).map(|_| rng.random_range(-0.1..0.1)).collect();
    GrayImage::from_fn(size, size, |x, y| {
        let on = match class {
            0 => ((y + phase) / period) % 2 == 0,
            1 => ((x + phase) / period) % 2 == 0,
            2 => ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt() < radius,
            _ => (((x + phase) / period) + ((y + phase) / period)) % 2 == 0,
        };
        (if on { 0.8 } else { 0.2 }) + noise[y * size + x]
    })
}

/// `per_class` images of each of the four classes, preprocessed for `size`.
pub fn pattern_set(per_class: usize, size: usize, seed: u64) -> PreparedSet {
    let mut rng = rng_for(seed, "fixtures/patterns");
    let (mut ids, mut labels, mut images) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..per_class {
        for class in 0..4 {
            ids.push(format!("synthetic/{class}/{i:03}.png"));
            labels.push(class);
            images.push(pattern(class, size, &mut rng));
        }
    }
    let classes = VOCABULARY.iter().map(|s| s.to_string()).collect();
    PreparedSet::from_images(ids, labels, &images, classes, &PreprocessConfig::with_input_size(size)).unwrap()
}

/// Creates `count` empty `.png` files under `root/folder`.
pub fn touch_images(root: &std::path::Path, folder: &str, count: usize) {
    let dir = root.join(folder);
    std::fs::create_dir_all(&dir).unwrap();
    for i in 0..count {
        std::fs::write(dir.join(format!("img{i:05}.png")), b"").unwrap();
    }
}

/// A manifest of `per_class` fake samples per class (paths are never opened).
pub fn label_manifest(per_class: usize) -> cxrfuse::datasets::DatasetManifest {
    use cxrfuse::datasets::{CohortSource, DatasetManifest, SampleRef};
    let samples = (0..per_class)
        .flat_map(|i| {
            VOCABULARY.iter().map(move |class| SampleRef {
                id: format!("source2/{class}/{i:04}.png"),
                path: format!("/nonexistent/{class}/{i:04}.png").into(),
                label: class.to_string(),
                source: CohortSource::Source2,
            })
        })
        .collect();
    DatasetManifest {
        name: "synthetic".into(),
        classes: VOCABULARY.iter().map(|s| s.to_string()).collect(),
        samples,
        seed: 0,
    }
}
