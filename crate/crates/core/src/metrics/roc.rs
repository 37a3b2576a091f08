use serde::{Deserialize, Serialize};

use super::prf::{mean, weighted_mean};
use crate::error::{Error, Result};

/// ROC points from a descending threshold sweep. `thresholds[i]` is the
/// cut (`score >= t` counts as positive) producing `points[i]`; the first
/// threshold is `+inf`, giving `(0, 0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
}

/// Binary ROC curve and trapezoidal area. Tied scores form a single step,
/// so the area equals `P(s+ > s-) + P(s+ = s-) / 2`.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<(RocCurve, f64)> {
    if scores.len() != truth.len() {
        return Err(Error::Input(format!("{} scores for {} labels", scores.len(), truth.len())));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Input(format!("score {bad} is not a number")));
    }
    let pos = truth.iter().filter(|&&t| t).count() as u64;
    let neg = truth.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Input("AUC is undefined when only one class is present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0u64, 0u64);
    // twice the area, in units of one positive-negative pair
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == t {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        thresholds.push(t);
    }
    let auc = area2 as f64 / (2 * pos as u128 * neg as u128) as f64;
    Ok((RocCurve { points, thresholds }, auc))
}

/// One-vs-rest AUCs of a probability table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MulticlassAuc {
    /// `None` where a class has no positive or no negative samples.
    pub per_class: Vec<Option<f64>>,
    pub curves: Vec<Option<RocCurve>>,
    pub macro_avg: f64,
    pub weighted: f64,
    pub micro: f64,
}

pub fn multiclass_auc(probs: &[Vec<f64>], truth: &[usize], k: usize) -> Result<MulticlassAuc> {
    if probs.len() != truth.len() {
        return Err(Error::Input(format!("{} probability rows for {} labels", probs.len(), truth.len())));
    }
    for (i, row) in probs.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Shape(format!("row {i} has {} entries, expected {k}", row.len())));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Input(format!("probability row {i} sums to {s}, not 1")));
        }
        if truth[i] >= k {
            return Err(Error::Input(format!("label {} outside [0, {k})", truth[i])));
        }
    }
    let mut per_class = Vec::with_capacity(k);
    let mut curves = Vec::with_capacity(k);
    let (mut defined, mut supports) = (Vec::new(), Vec::new());
    for c in 0..k {
        let scores: Vec<f64> = probs.iter().map(|r| r[c]).collect();
        let labels: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        let support = labels.iter().filter(|&&l| l).count() as u64;
        if support == 0 || support == labels.len() as u64 {
            log::warn!("class {c}: one-vs-rest AUC undefined (support {support} of {}); skipped in averages", labels.len());
            per_class.push(None);
            curves.push(None);
            continue;
        }
        let (curve, auc) = roc_auc(&scores, &labels)?;
        per_class.push(Some(auc));
        curves.push(Some(curve));
        defined.push(auc);
        supports.push(support);
    }
    if defined.is_empty() {
        return Err(Error::Input("AUC is undefined: no class has both positive and negative samples".into()));
    }
    let flat_scores: Vec<f64> = probs.iter().flatten().copied().collect();
    let flat_truth: Vec<bool> = truth.iter().flat_map(|&t| (0..k).map(move |c| c == t)).collect();
    let (_, micro) = roc_auc(&flat_scores, &flat_truth)?;
    Ok(MulticlassAuc {
        per_class,
        curves,
        macro_avg: mean(&defined),
        weighted: weighted_mean(&defined, &supports)?,
        micro,
    })
}
