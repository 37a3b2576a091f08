use serde::{Deserialize, Serialize};

use super::ConfusionMatrix;
use crate::error::{Error, Result};

/// One-vs-rest counts for a single class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Tally {
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn pooled(tallies: &[Tally]) -> Tally {
        tallies.iter().fold(Tally::default(), |a, t| Tally {
            tp: a.tp + t.tp,
            fp: a.fp + t.fp,
            fn_: a.fn_ + t.fn_,
        })
    }
}

pub fn tally(cm: &ConfusionMatrix, k: usize) -> Tally {
    let tp = cm.get(k, k);
    let predicted: u64 = (0..cm.k()).map(|i| cm.get(i, k)).sum();
    let actual: u64 = cm.counts()[k].iter().sum();
    Tally {
        tp,
        fp: predicted - tp,
        fn_: actual - tp,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Score {
    Precision,
    Recall,
    F1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Average {
    Micro,
    Macro,
    Weighted,
}

/// Precision, recall and F1; any zero denominator yields 0 and sets the flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub zero_division: bool,
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Tally {
    pub fn prf(&self) -> Prf {
        let mut flag = false;
        let precision = ratio(self.tp, self.tp + self.fp, &mut flag);
        let recall = ratio(self.tp, self.tp + self.fn_, &mut flag);
        let f1 = ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_, &mut flag);
        Prf {
            precision,
            recall,
            f1,
            zero_division: flag,
        }
    }

    pub fn score(&self, s: Score) -> f64 {
        let p = self.prf();
        match s {
            Score::Precision => p.precision,
            Score::Recall => p.recall,
            Score::F1 => p.f1,
        }
    }
}

pub fn prf1(cm: &ConfusionMatrix, k: usize) -> Prf {
    tally(cm, k).prf()
}

/// Averages a per-class score. Micro pools the counts before scoring;
/// macro and weighted average the per-class scores.
pub fn aggregate(tallies: &[Tally], score: Score, mode: Average) -> Result<f64> {
    let supports: Vec<u64> = tallies.iter().map(Tally::support).collect();
    if supports.iter().sum::<u64>() == 0 {
        return Err(Error::Input("cannot aggregate over zero total support".into()));
    }
    let values: Vec<f64> = tallies.iter().map(|t| t.score(score)).collect();
    Ok(match mode {
        Average::Micro => Tally::pooled(tallies).score(score),
        Average::Macro => mean(&values),
        Average::Weighted => weighted_mean(&values, &supports)?,
    })
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn weighted_mean(values: &[f64], weights: &[u64]) -> Result<f64> {
    let total: u64 = weights.iter().sum();
    if total == 0 || values.len() != weights.len() {
        return Err(Error::Input("weighted mean needs matching, non-zero weights".into()));
    }
    Ok(values.iter().zip(weights).map(|(v, &w)| v * w as f64).sum::<f64>() / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        let t = Tally { tp: 2, fp: 1, fn_: 1 };
        let p = t.prf();
        assert_eq!((p.precision, p.recall, p.f1), (2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0));
        let absent = Tally::default().prf();
        assert_eq!((absent.precision, absent.recall, absent.f1), (0.0, 0.0, 0.0));
        assert!(absent.zero_division);
    }

    #[test]
    fn macro_and_weighted_example() {
        // per-class F1 of 1.0 and 0.5 with supports 1 and 3
        let a = Tally { tp: 1, fp: 0, fn_: 0 };
        let b = Tally { tp: 1, fp: 0, fn_: 2 };
        assert_eq!(b.prf().f1, 0.5);
        assert_eq!(aggregate(&[a, b], Score::F1, Average::Macro).unwrap(), 0.75);
        assert_eq!(aggregate(&[a, b], Score::F1, Average::Weighted).unwrap(), 0.625);
        assert!(aggregate(&[Tally::default()], Score::F1, Average::Micro).is_err());
    }
}
