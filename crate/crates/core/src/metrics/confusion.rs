use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are the true class, columns the predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    counts: Vec<Vec<u64>>,
}

/// Tallies `(truth, pred)` pairs over `k` classes named `0..k`.
pub fn confusion(pred: &[usize], truth: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros((0..k).map(|i| i.to_string()).collect());
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= k || t >= k {
            return Err(Error::Input(format!("label {} outside [0, {k})", p.max(t))));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

impl ConfusionMatrix {
    pub fn zeros(classes: Vec<String>) -> Self {
        let k = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = classes.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Shape(format!("confusion counts must be {k}x{k}")));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn with_classes(mut self, classes: Vec<String>) -> Result<Self> {
        if classes.len() != self.k() {
            return Err(Error::Shape(format!("{} class names for {} classes", classes.len(), self.k())));
        }
        self.classes = classes;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    /// Row sums: number of samples of each true class.
    pub fn supports(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            0.0
        } else {
            self.trace() as f64 / n as f64
        }
    }

    /// Element-wise sum; class vocabularies must agree.
    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::Input("cannot add confusion matrices over different classes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    /// Counts with row percentages, one row per true class.
    pub fn render(&self) -> String {
        let width = self.classes.iter().map(String::len).max().unwrap_or(0).max(12) + 2;
        let mut s = format!("{:width$}", "true \\ pred");
        for c in &self.classes {
            let _ = write!(s, "{c:>width$}");
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            let support: u64 = row.iter().sum();
            let _ = write!(s, "{c:width$}");
            for &v in row {
                let pct = if support == 0 { 0.0 } else { 100.0 * v as f64 / support as f64 };
                let _ = write!(s, "{:>width$}", format!("{v} ({pct:.1}%)"));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_example() {
        let cm = confusion(&[0, 1, 1, 0], &[0, 1, 0, 0], 2).unwrap();
        assert_eq!(cm.counts(), &[vec![2, 1], vec![0, 1]]);
        assert_eq!(cm.supports(), vec![3, 1]);
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(confusion(&[], &[], 3).unwrap().total(), 0);
        assert!(confusion(&[3], &[0], 3).is_err());
        assert!(confusion(&[0], &[], 3).is_err());
        let diag = confusion(&[0, 1, 1, 2], &[0, 1, 1, 2], 3).unwrap();
        assert_eq!(diag.counts(), &[vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
    }
}
