use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::GrayImage;

/// A radiologist-marked finding: a circle in input-pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleAnnotation {
    pub image_id: String,
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    #[serde(default)]
    pub label: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleCheck {
    /// `mean_inside > 0.5`.
    pub detected: bool,
    pub mean_inside: f64,
    /// Number of pixel centers inside the circle.
    pub pixels: usize,
}

/// Threshold on the normalized activation; detection needs strictly more.
pub const DETECTION_THRESHOLD: f64 = 0.5;

/// Mean of `map` over pixels `(x, y)` with `(x - cx)^2 + (y - cy)^2 <= r^2`.
pub fn circle_check(map: &GrayImage, ann: &CircleAnnotation) -> Result<CircleCheck> {
    if !(ann.r > 0.0 && ann.r.is_finite() && ann.cx.is_finite() && ann.cy.is_finite()) {
        return Err(Error::Input(format!(
            "annotation for {:?}: radius must be positive and the center finite",
            ann.image_id
        )));
    }
    let (mut sum, mut pixels) = (0.0, 0usize);
    let r2 = ann.r * ann.r;
    let x0 = (ann.cx - ann.r).floor().max(0.0) as usize;
    let y0 = (ann.cy - ann.r).floor().max(0.0) as usize;
    let x1 = ((ann.cx + ann.r).ceil().max(-1.0) + 1.0).min(map.width() as f64) as usize;
    let y1 = ((ann.cy + ann.r).ceil().max(-1.0) + 1.0).min(map.height() as f64) as usize;
    for y in y0..y1 {
        for x in x0..x1 {
            if (x as f64 - ann.cx).powi(2) + (y as f64 - ann.cy).powi(2) <= r2 {
                sum += map.get(x, y) as f64;
                pixels += 1;
            }
        }
    }
    if pixels == 0 {
        return Err(Error::Input(format!(
            "annotation for {:?} at ({}, {}) r={} covers no pixel of the {}x{} map",
            ann.image_id,
            ann.cx,
            ann.cy,
            ann.r,
            map.width(),
            map.height()
        )));
    }
    let mean_inside = sum / pixels as f64;
    Ok(CircleCheck {
        detected: mean_inside > DETECTION_THRESHOLD,
        mean_inside,
        pixels,
    })
}

/// Reads an `annotations.json` list.
pub fn read_annotations(path: &Path) -> Result<Vec<CircleAnnotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::path_io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(cx: f64, cy: f64, r: f64) -> CircleAnnotation {
        CircleAnnotation {
            image_id: "x".into(),
            cx,
            cy,
            r,
            label: String::new(),
        }
    }

    #[test]
    fn counts_pixels_on_the_boundary() {
        let map = GrayImage::filled(9, 9, 1.0);
        // r = 1 around a pixel center: the center and its 4 neighbours.
        assert_eq!(circle_check(&map, &ann(4.0, 4.0, 1.0)).unwrap().pixels, 5);
    }

    #[test]
    fn circle_outside_the_image_is_an_input_error() {
        let map = GrayImage::filled(8, 8, 1.0);
        assert!(matches!(circle_check(&map, &ann(-5.0, 3.0, 2.0)), Err(Error::Input(_))));
        assert!(matches!(circle_check(&map, &ann(30.0, 30.0, 2.0)), Err(Error::Input(_))));
        assert!(matches!(circle_check(&map, &ann(3.0, 3.0, 0.0)), Err(Error::Input(_))));
    }
}
