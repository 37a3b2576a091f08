mod common;

use std::path::PathBuf;

use cxrfuse::error::Error;
use cxrfuse::heatmaps::{circle_check, extract_all, extract_heatmap, render_overlay, CircleAnnotation, LayerName};
use cxrfuse::preprocess::{resize, GrayImage};
use cxrfuse::seed::rng_for;
use cxrfuse::{FusionModel, FusionModelConfig};
use proptest::prelude::*;
use rand::Rng;

fn tiny() -> FusionModel<f32> {
    FusionModel::new(&FusionModelConfig::tiny(4), 21).unwrap()
}

fn ann(cx: f64, cy: f64, r: f64) -> CircleAnnotation {
    CircleAnnotation {
        image_id: "img".into(),
        cx,
        cy,
        r,
        label: "opacity".into(),
    }
}

#[test]
fn every_layer_yields_an_input_sized_unit_range_map() {
    let model = tiny();
    let data = common::pattern_set(1, 64, 9);
    let stack = extract_all(&model, &data.ids[0], &data.images[0]).unwrap();
    assert_eq!(stack.maps.len(), 10);
    for (layer, map) in &stack.maps {
        assert_eq!((map.width(), map.height()), (64, 64), "{layer}");
        assert!(map.data().iter().all(|v| (0.0..=1.0).contains(v)), "{layer}");
    }
    assert_eq!(stack, extract_all(&model, &data.ids[0], &data.images[0]).unwrap());
}

#[test]
fn zeroed_conv_block_a_gives_a_zero_map() {
    let mut model = tiny();
    for stage in &mut model.conv_blocks[0].stages {
        stage.conv.weight.value.data_mut().fill(0.0);
    }
    let data = common::pattern_set(1, 64, 10);
    let map = extract_heatmap(&model, &data.images[2], "convA").unwrap();
    assert!(map.data().iter().all(|&v| v == 0.0));
}

#[test]
fn unknown_layer_lists_the_valid_names() {
    let data = common::pattern_set(1, 64, 11);
    let err = extract_heatmap(&tiny(), &data.images[0], "conv_a").unwrap_err();
    let msg = err.to_string();
    for l in LayerName::ALL {
        assert!(msg.contains(l.as_str()), "{msg}");
    }
}

#[test]
fn wrong_image_size_is_a_shape_error() {
    let img = GrayImage::filled(32, 32, 0.0);
    assert!(matches!(extract_heatmap(&tiny(), &img, "new7"), Err(Error::Shape(_))));
}

#[test]
fn circle_check_constant_maps() {
    let ones = circle_check(&GrayImage::filled(32, 32, 1.0), &ann(10.0, 12.0, 4.0)).unwrap();
    assert!(ones.detected);
    assert_eq!(ones.mean_inside, 1.0);
    let zeros = circle_check(&GrayImage::filled(32, 32, 0.0), &ann(10.0, 12.0, 4.0)).unwrap();
    assert!(!zeros.detected);
    assert_eq!(zeros.mean_inside, 0.0);
}

#[test]
fn exactly_half_coverage_is_not_a_detection() {
    // A center between pixel centers makes the covered set symmetric about
    // x = cx, so lighting up the right half covers exactly half the pixels.
    let (cx, cy, r) = (15.5, 15.5, 6.0);
    let map = GrayImage::from_fn(32, 32, |x, _| if x as f64 > cx { 1.0 } else { 0.0 });
    let inside: Vec<(usize, usize)> = (0..32)
        .flat_map(|y| (0..32).map(move |x| (x, y)))
        .filter(|&(x, y)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
        .collect();
    let lit = inside.iter().filter(|&&(x, _)| x as f64 > cx).count();
    assert_eq!(2 * lit, inside.len());
    let check = circle_check(&map, &ann(cx, cy, r)).unwrap();
    assert_eq!(check.pixels, inside.len());
    assert_eq!(check.mean_inside, 0.5);
    assert!(!check.detected);
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/overlay.png")
}

fn golden_inputs() -> (GrayImage, GrayImage) {
    let img = GrayImage::from_fn(24, 16, |x, y| ((x * 7 + y * 3) % 11) as f32 / 10.0);
    let map = GrayImage::from_fn(24, 16, |x, y| ((x as f32 - 12.0).powi(2) + (y as f32 - 8.0).powi(2)).sqrt() / 15.0);
    (img, map)
}

/// Set `CXRFUSE_BLESS=1` to regenerate the reference file.
#[test]
fn overlay_png_matches_the_golden_file() {
    let (img, map) = golden_inputs();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.png");
    render_overlay(&img, &map, &out).unwrap();
    let bytes = std::fs::read(&out).unwrap();
    if std::env::var_os("CXRFUSE_BLESS").is_some() {
        std::fs::write(golden_path(), &bytes).unwrap();
    }
    assert_eq!(bytes, std::fs::read(golden_path()).expect("golden overlay missing"));
}

#[test]
fn overlay_to_a_missing_directory_is_an_io_error() {
    let (img, map) = golden_inputs();
    let dir = tempfile::tempdir().unwrap();
    let err = render_overlay(&img, &map, &dir.path().join("missing/o.png")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}

fn unit_map(w: usize, h: usize) -> impl Strategy<Value = GrayImage> {
    prop::collection::vec(0.0f32..=1.0, w * h).prop_map(move |d| GrayImage::new(w, h, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn circle_check_is_monotone(
        base in unit_map(16, 16), bump in prop::collection::vec(0.0f32..=1.0, 256),
        cx in 0.0f64..16.0, cy in 0.0f64..16.0, r in 1.0f64..8.0,
    ) {
        let higher = GrayImage::new(16, 16, base.data().iter().zip(&bump).map(|(&a, &b)| (a + b).min(1.0)).collect()).unwrap();
        let a = ann(cx, cy, r);
        let lo = circle_check(&base, &a).unwrap();
        let hi = circle_check(&higher, &a).unwrap();
        prop_assert!(hi.mean_inside >= lo.mean_inside);
        prop_assert!(!lo.detected || hi.detected);
    }

    /// Bilinear upsampling stays inside the source range, and with an odd
    /// integer factor the center pixel of the maximal cell carries the maximum.
    #[test]
    fn upsampling_keeps_range_and_odd_factor_peak(
        (w, h) in (2usize..8, 2usize..8), factor in prop::sample::select(vec![3usize, 5, 7]), seed in any::<u64>(),
    ) {
        let mut rng = rng_for(seed, "upsample");
        let small = GrayImage::new(w, h, (0..w * h).map(|_| rng.random::<f32>()).collect()).unwrap();
        let big = resize(&small, w * factor, h * factor).unwrap();
        let (lo, hi) = small.data().iter().fold((f32::MAX, f32::MIN), |(l, u), &v| (l.min(v), u.max(v)));
        prop_assert!(big.data().iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
        let arg = small.data().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let (mx, my) = (arg % w, arg / w);
        let peak = big.get(mx * factor + factor / 2, my * factor + factor / 2);
        prop_assert!((peak - hi).abs() < 1e-6);
    }
}

#[test]
fn twenty_random_images_give_deterministic_unit_range_maps() {
    let model = tiny();
    let mut rng = rng_for(5, "heatmap-images");
    for i in 0..20 {
        let img = GrayImage::new(64, 64, (0..64 * 64).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let a = extract_all(&model, &format!("r{i}"), &img).unwrap();
        let b = extract_all(&model, &format!("r{i}"), &img).unwrap();
        assert_eq!(a, b);
        for (_, m) in &a.maps {
            assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
