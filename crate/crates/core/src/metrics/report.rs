use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::prf::{aggregate, tally, Average, Score, Tally};
use super::roc::multiclass_auc;
use super::{confusion, ConfusionMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub micro: f64,
    #[serde(rename = "macro")]
    pub macro_avg: f64,
    pub weighted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// `null` where the one-vs-rest AUC is undefined.
    pub auc: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub f1: Triple,
    pub auc: Triple,
    pub precision: Triple,
    pub recall: Triple,
}

/// Unsuffixed scores: macro averages, with AUC taken one-vs-rest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub recall: f64,
    pub precision: f64,
    pub auc_roc: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportFlags {
    /// Classes whose precision, recall or F1 hit a zero denominator (reported as 0).
    pub zero_division: Vec<String>,
    /// Classes without both positive and negative samples.
    pub undefined_auc: Vec<String>,
}

/// Everything computed for one evaluation. Values are fractions in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub per_class: PerClass,
    pub aggregates: Aggregates,
    pub headline: Headline,
    pub roc: BTreeMap<String, Vec<[f64; 2]>>,
    pub accuracy: f64,
    pub samples: u64,
    pub flags: ReportFlags,
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl MetricsReport {
    /// Builds a report from class-probability rows; the prediction is the argmax.
    pub fn from_probabilities(probs: &[Vec<f64>], truth: &[usize], classes: &[String]) -> Result<Self> {
        let k = classes.len();
        if k < 2 {
            return Err(Error::Config("a report needs at least two classes".into()));
        }
        if probs.is_empty() {
            return Err(Error::Input("cannot report on an empty evaluation set".into()));
        }
        let pred: Vec<usize> = probs.iter().map(|r| argmax(r)).collect();
        let cm = confusion(&pred, truth, k)?.with_classes(classes.to_vec())?;
        let aucs = multiclass_auc(probs, truth, k)?;
        let tallies: Vec<Tally> = (0..k).map(|c| tally(&cm, c)).collect();
        let prfs: Vec<_> = tallies.iter().map(Tally::prf).collect();
        let triple = |s: Score| -> Result<Triple> {
            Ok(Triple {
                micro: aggregate(&tallies, s, Average::Micro)?,
                macro_avg: aggregate(&tallies, s, Average::Macro)?,
                weighted: aggregate(&tallies, s, Average::Weighted)?,
            })
        };
        let aggregates = Aggregates {
            f1: triple(Score::F1)?,
            auc: Triple {
                micro: aucs.micro,
                macro_avg: aucs.macro_avg,
                weighted: aucs.weighted,
            },
            precision: triple(Score::Precision)?,
            recall: triple(Score::Recall)?,
        };
        let headline = Headline {
            recall: aggregates.recall.macro_avg,
            precision: aggregates.precision.macro_avg,
            auc_roc: aggregates.auc.macro_avg,
            f1: aggregates.f1.macro_avg,
        };
        let mut roc = BTreeMap::new();
        let mut flags = ReportFlags::default();
        for (c, name) in classes.iter().enumerate() {
            match &aucs.curves[c] {
                Some(curve) => {
                    roc.insert(name.clone(), curve.points.iter().map(|&(x, y)| [x, y]).collect());
                }
                None => flags.undefined_auc.push(name.clone()),
            }
            if prfs[c].zero_division {
                flags.zero_division.push(name.clone());
            }
        }
        Ok(MetricsReport {
            classes: classes.to_vec(),
            confusion: cm.counts().to_vec(),
            per_class: PerClass {
                precision: prfs.iter().map(|p| p.precision).collect(),
                recall: prfs.iter().map(|p| p.recall).collect(),
                f1: prfs.iter().map(|p| p.f1).collect(),
                auc: aucs.per_class,
            },
            aggregates,
            headline,
            roc,
            accuracy: cm.accuracy(),
            samples: cm.total(),
            flags,
        })
    }

    pub fn confusion_matrix(&self) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(self.classes.clone(), self.confusion.clone()).expect("report matrix is square")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::path_io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::path_io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Human-readable summary with percentages to one decimal.
    pub fn render(&self) -> String {
        let pct = |v: f64| format!("{:.1}", 100.0 * v);
        let mut s = String::new();
        let h = &self.headline;
        let _ = writeln!(s, "samples   {}", self.samples);
        let _ = writeln!(s, "accuracy  {}", pct(self.accuracy));
        let _ = writeln!(
            s,
            "recall {}  precision {}  AUC-ROC {}  F1 {}",
            pct(h.recall),
            pct(h.precision),
            pct(h.auc_roc),
            pct(h.f1)
        );
        let _ = writeln!(s, "\n{:<14}{:>10}{:>10}{:>10}{:>10}", "class", "precision", "recall", "F1", "AUC");
        for (c, name) in self.classes.iter().enumerate() {
            let auc = self.per_class.auc[c].map_or("-".to_string(), pct);
            let _ = writeln!(
                s,
                "{name:<14}{:>10}{:>10}{:>10}{auc:>10}",
                pct(self.per_class.precision[c]),
                pct(self.per_class.recall[c]),
                pct(self.per_class.f1[c])
            );
        }
        let _ = writeln!(s, "\n{}", self.confusion_matrix().render());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let classes: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let truth = [0, 1, 2, 2, 1, 0];
        let probs: Vec<Vec<f64>> = truth.iter().map(|&t| (0..3).map(|c| if c == t { 1.0 } else { 0.0 }).collect()).collect();
        let r = MetricsReport::from_probabilities(&probs, &truth, &classes).unwrap();
        let h = r.headline;
        assert_eq!([h.recall, h.precision, h.auc_roc, h.f1], [1.0; 4]);
        assert_eq!(r.accuracy, 1.0);
        assert!(r.flags.zero_division.is_empty());
        let json = serde_json::to_value(&r).unwrap();
        for key in ["classes", "confusion", "per_class", "aggregates", "headline", "roc"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert!(json["aggregates"]["f1"].get("macro").is_some());
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.6, 0.3]), 1);
    }
}
