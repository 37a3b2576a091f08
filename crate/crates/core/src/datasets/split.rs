//! Monte Carlo (repeated random subsampling) train/test splits.

use std::path::Path;

use rand::seq::SliceRandom;

use super::{check_csv_safe, DatasetManifest};
use crate::error::{config, Error, Result};
use crate::seed::rng_for;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitPlan {
    pub folds: Vec<Fold>,
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitOptions {
    pub folds: usize,
    pub train_fraction: f64,
    /// Split each class separately so class proportions are preserved.
    pub stratified: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            folds: 4,
            train_fraction: 0.7,
            stratified: false,
        }
    }
}

/// `round(fraction * n)` with halves rounded up, kept within `[1, n - 1]`
/// so that both sides are non-empty.
pub fn train_size(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return config(format!("train fraction must lie in (0, 1), got {fraction}"));
    }
    if n < 2 {
        return config(format!("cannot split {n} sample(s) into non-empty train and test sets"));
    }
    // the small offset absorbs binary representation error at exact halves (0.7 * 5)
    let k = (fraction * n as f64 + 0.5 + 1e-9).floor() as usize;
    Ok(k.clamp(1, n - 1))
}

/// Independent shuffles of the manifest, each cut into train and test.
pub fn monte_carlo_split(manifest: &DatasetManifest, options: SplitOptions, seed: u64) -> Result<SplitPlan> {
    if options.folds == 0 {
        return config("at least one fold is required");
    }
    let n = manifest.len();
    let k = train_size(n, options.train_fraction)?;
    let labels = manifest.labels()?;
    let mut folds = Vec::with_capacity(options.folds);
    for f in 0..options.folds {
        let mut rng = rng_for(seed, &format!("split/fold{}", f + 1));
        let mut train_idx = if options.stratified {
            let mut picked = Vec::with_capacity(k);
            for c in 0..manifest.classes.len() {
                let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                members.shuffle(&mut rng);
                let take = ((options.train_fraction * members.len() as f64) + 0.5 + 1e-9).floor() as usize;
                picked.extend_from_slice(&members[..take.min(members.len())]);
            }
            if picked.is_empty() || picked.len() == n {
                return config("stratified split leaves the train or test side empty");
            }
            picked
        } else {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order.truncate(k);
            order
        };
        train_idx.sort_unstable();
        let mut in_train = vec![false; n];
        for &i in &train_idx {
            in_train[i] = true;
        }
        let ids = |want: bool| -> Vec<String> {
            (0..n).filter(|&i| in_train[i] == want).map(|i| manifest.samples[i].id.clone()).collect()
        };
        folds.push(Fold {
            train: ids(true),
            test: ids(false),
        });
    }
    Ok(SplitPlan {
        folds,
        train_fraction: options.train_fraction,
        seed,
    })
}

impl SplitPlan {
    /// Writes `fold<k>_train.csv` and `fold<k>_test.csv` for `k = 1..`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        crate::error::ensure_dir(dir)?;
        for (k, fold) in self.folds.iter().enumerate() {
            write_id_list(&dir.join(format!("fold{}_train.csv", k + 1)), &fold.train)?;
            write_id_list(&dir.join(format!("fold{}_test.csv", k + 1)), &fold.test)?;
        }
        Ok(())
    }

    /// Reads every consecutive `fold<k>_*.csv` pair found in `dir`.
    pub fn read(dir: &Path) -> Result<SplitPlan> {
        let mut folds = Vec::new();
        loop {
            let k = folds.len() + 1;
            let train = dir.join(format!("fold{k}_train.csv"));
            if !train.exists() {
                break;
            }
            folds.push(Fold {
                train: read_id_list(&train)?,
                test: read_id_list(&dir.join(format!("fold{k}_test.csv")))?,
            });
        }
        if folds.is_empty() {
            return Err(Error::Data(format!("no fold1_train.csv in {}", dir.display())));
        }
        let n = folds[0].train.len() + folds[0].test.len();
        Ok(SplitPlan {
            train_fraction: folds[0].train.len() as f64 / n.max(1) as f64,
            folds,
            seed: 0,
        })
    }
}

pub fn write_id_list(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = String::from("id\n");
    for id in ids {
        check_csv_safe(id, "id")?;
        text.push_str(id);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::path_io(path, e))
}

pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::path_io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("id") {
        return Err(Error::Data(format!("{}: expected header \"id\"", path.display())));
    }
    Ok(lines.filter(|l| !l.is_empty()).map(str::to_string).collect())
}
