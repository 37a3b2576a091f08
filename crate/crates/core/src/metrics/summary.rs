//! Cross-validation summary: one row per metric, one column per fold, and
//! the mean with its sample standard deviation.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{ConfusionMatrix, MetricsReport};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SummaryMetric {
    Recall,
    Precision,
    AucRoc,
    AucRocMacro,
    AucRocMicro,
    AucRocWeighted,
    F1,
    F1Macro,
    F1Micro,
    F1Weighted,
}

impl SummaryMetric {
    pub const ALL: [SummaryMetric; 10] = [
        SummaryMetric::Recall,
        SummaryMetric::Precision,
        SummaryMetric::AucRoc,
        SummaryMetric::AucRocMacro,
        SummaryMetric::AucRocMicro,
        SummaryMetric::AucRocWeighted,
        SummaryMetric::F1,
        SummaryMetric::F1Macro,
        SummaryMetric::F1Micro,
        SummaryMetric::F1Weighted,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SummaryMetric::Recall => "Recall",
            SummaryMetric::Precision => "Precision",
            SummaryMetric::AucRoc => "AUC-ROC",
            SummaryMetric::AucRocMacro => "AUC-ROC macro",
            SummaryMetric::AucRocMicro => "AUC-ROC micro",
            SummaryMetric::AucRocWeighted => "AUC-ROC weighted",
            SummaryMetric::F1 => "F1",
            SummaryMetric::F1Macro => "F1 macro",
            SummaryMetric::F1Micro => "F1 micro",
            SummaryMetric::F1Weighted => "F1 weighted",
        }
    }

    pub fn extract(self, r: &MetricsReport) -> f64 {
        let a = &r.aggregates;
        match self {
            SummaryMetric::Recall => r.headline.recall,
            SummaryMetric::Precision => r.headline.precision,
            SummaryMetric::AucRoc => r.headline.auc_roc,
            SummaryMetric::AucRocMacro => a.auc.macro_avg,
            SummaryMetric::AucRocMicro => a.auc.micro,
            SummaryMetric::AucRocWeighted => a.auc.weighted,
            SummaryMetric::F1 => r.headline.f1,
            SummaryMetric::F1Macro => a.f1.macro_avg,
            SummaryMetric::F1Micro => a.f1.micro,
            SummaryMetric::F1Weighted => a.f1.weighted,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: SummaryMetric,
    pub per_fold: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single fold.
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: usize,
    pub rows: Vec<SummaryRow>,
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

pub fn summarize(reports: &[MetricsReport]) -> Result<CvSummary> {
    if reports.is_empty() {
        return Err(Error::Input("no fold reports to summarize".into()));
    }
    let rows = SummaryMetric::ALL
        .iter()
        .map(|&metric| {
            let per_fold: Vec<f64> = reports.iter().map(|r| metric.extract(r)).collect();
            let (mean, sd) = mean_sd(&per_fold);
            SummaryRow {
                metric,
                per_fold,
                mean,
                sd,
            }
        })
        .collect();
    Ok(CvSummary {
        folds: reports.len(),
        rows,
    })
}

/// Sum of the per-fold confusion matrices.
pub fn combine_confusion(reports: &[MetricsReport]) -> Result<ConfusionMatrix> {
    let first = reports.first().ok_or_else(|| Error::Input("no fold reports to combine".into()))?;
    let mut total = ConfusionMatrix::zeros(first.classes.clone());
    for r in reports {
        total.add(&r.confusion_matrix())?;
    }
    Ok(total)
}

impl CvSummary {
    /// Percentages with one decimal; the best and worst fold of each row are
    /// marked `(max)` / `(min)` when the folds differ.
    pub fn render(&self) -> String {
        let pct = |v: f64| format!("{:.1}", 100.0 * v);
        let label_w = 18;
        let col_w = 14;
        let mut s = format!("{:<label_w$}", "Metric");
        for k in 1..=self.folds {
            let _ = write!(s, "{:>col_w$}", format!("Fold {k}"));
        }
        let _ = writeln!(s, "{:>col_w$}", "Average");
        for row in &self.rows {
            let _ = write!(s, "{:<label_w$}", row.metric.label());
            let max = row.per_fold.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = row.per_fold.iter().copied().fold(f64::INFINITY, f64::min);
            let (mut marked_max, mut marked_min) = (false, false);
            for &v in &row.per_fold {
                let mut cell = pct(v);
                if max > min && v == max && !marked_max {
                    cell.push_str(" (max)");
                    marked_max = true;
                } else if max > min && v == min && !marked_min {
                    cell.push_str(" (min)");
                    marked_min = true;
                }
                let _ = write!(s, "{cell:>col_w$}");
            }
            let _ = writeln!(s, "{:>col_w$}", format!("{} ± {}", pct(row.mean), pct(row.sd)));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_sd() {
        let (m, sd) = mean_sd(&[0.6, 0.7, 0.8, 0.9]);
        assert!((m - 0.75).abs() < 1e-15);
        assert!((sd - (0.05f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[0.42]), (0.42, 0.0));
    }
}
