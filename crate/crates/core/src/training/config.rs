use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::preprocess::AugmentationSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the squared-norm penalty on convolution and dense kernels.
    pub l2_coefficient: f64,
    pub seed: u64,
    /// Shift limits are given for 224 px inputs and rescaled to the model input.
    pub augmentation: AugmentationSpec,
    pub freeze_backbones: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            epochs: 30,
            batch_size: 16,
            l2_coefficient: 1e-4,
            seed: 0,
            augmentation: AugmentationSpec::default(),
            freeze_backbones: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is accepted as a degenerate no-op run.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return config(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return config(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.epochs == 0 {
            return config("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return config("batch_size must be at least 1");
        }
        if !(self.l2_coefficient >= 0.0 && self.l2_coefficient.is_finite()) {
            return config(format!("l2_coefficient must be finite and >= 0, got {}", self.l2_coefficient));
        }
        self.augmentation.validate()
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::path_io(path, e))?;
        let c: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the per-batch losses.
    pub loss: f64,
    pub accuracy: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// Copy with wall-clock times zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        TrainHistory {
            epochs: self
                .epochs
                .iter()
                .map(|r| EpochRecord { seconds: 0.0, ..r.clone() })
                .collect(),
        }
    }

    /// `epoch,loss,acc,seconds`. Loss and accuracy are written with full
    /// round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,acc,seconds\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{:?},{:?},{:.3}\n", r.epoch, r.loss, r.accuracy, r.seconds));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::path_io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let mut epochs = Vec::new();
        for row in rdr.deserialize::<(usize, f64, f64, f64)>() {
            let (epoch, loss, accuracy, seconds) = row.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            epochs.push(EpochRecord {
                epoch,
                loss,
                accuracy,
                seconds,
            });
        }
        Ok(TrainHistory { epochs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_bad_values_do_not() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = TrainConfig {
            learning_rate: f64::NAN,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epochs": 3}"#).is_ok());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn history_csv_round_trips() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                loss: 1.0 / 3.0,
                accuracy: 0.25,
                seconds: 1.5,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("history.csv");
        h.write_csv(&p).unwrap();
        assert_eq!(TrainHistory::read_csv(&p).unwrap(), h);
    }
}
