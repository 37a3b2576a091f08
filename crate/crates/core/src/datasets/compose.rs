//! Recipe-driven selection of images from the three source cohorts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_csv_safe, CohortSource, DatasetManifest, SampleRef, COVID, HEALTHY, PNEUMONIA, TUBERCULOSIS, VOCABULARY};
use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Recipe {
    Dxr1,
    Dxr2,
    Dxr3,
    Dxr4,
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Recipe::Dxr1 => "DXR1",
            Recipe::Dxr2 => "DXR2",
            Recipe::Dxr3 => "DXR3",
            Recipe::Dxr4 => "DXR4",
        };
        f.write_str(s)
    }
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DXR1" => Ok(Recipe::Dxr1),
            "DXR2" => Ok(Recipe::Dxr2),
            "DXR3" => Ok(Recipe::Dxr3),
            "DXR4" => Ok(Recipe::Dxr4),
            _ => Err(Error::Config(format!("unknown dataset {s:?} (expected DXR1..DXR4)"))),
        }
    }
}

/// Quota for one class, possibly spread over several cohorts.
struct Draw {
    class: &'static str,
    parts: Vec<(CohortSource, usize)>,
    /// Shortfall in one cohort may be covered by the others, in `parts` order.
    rebalance: bool,
}

impl Recipe {
    fn draws(self) -> Vec<Draw> {
        use CohortSource::*;
        let fixed = |class, parts: Vec<(CohortSource, usize)>| Draw {
            class,
            parts,
            rebalance: false,
        };
        let dxr2 = || {
            vec![
                fixed(COVID, vec![(Source2, 69)]),
                fixed(PNEUMONIA, vec![(Source2, 79)]),
                fixed(HEALTHY, vec![(Source2, 79)]),
            ]
        };
        match self {
            Recipe::Dxr1 => vec![fixed(PNEUMONIA, vec![(Source1, 3883)]), fixed(HEALTHY, vec![(Source1, 1350)])],
            Recipe::Dxr2 => dxr2(),
            Recipe::Dxr3 => {
                let mut d = dxr2();
                d.insert(2, fixed(TUBERCULOSIS, vec![(Source3, 79)]));
                d
            }
            Recipe::Dxr4 => vec![
                fixed(COVID, vec![(Source2, 69)]),
                fixed(PNEUMONIA, vec![(Source2, 79), (Source1, 221)]),
                fixed(TUBERCULOSIS, vec![(Source3, 310)]),
                // source2 holds fewer healthy images than its nominal share;
                // the remainder comes from source1, then source3
                Draw {
                    class: HEALTHY,
                    parts: vec![(Source1, 110), (Source3, 110), (Source2, 110)],
                    rebalance: true,
                },
            ],
        }
    }

    /// Per-class totals the recipe produces.
    pub fn expected_counts(self) -> Vec<(&'static str, usize)> {
        self.draws()
            .iter()
            .map(|d| (d.class, d.parts.iter().map(|p| p.1).sum()))
            .collect()
    }
}

/// Root directories of the three cohorts; each holds one folder per class.
#[derive(Clone, Debug, Default)]
pub struct SourceDirs {
    pub source1: Option<PathBuf>,
    pub source2: Option<PathBuf>,
    pub source3: Option<PathBuf>,
}

impl SourceDirs {
    pub fn get(&self, s: CohortSource) -> Option<&Path> {
        match s {
            CohortSource::Source1 => self.source1.as_deref(),
            CohortSource::Source2 => self.source2.as_deref(),
            CohortSource::Source3 => self.source3.as_deref(),
        }
    }
}

/// Folder names accepted for each class (compared case-insensitively).
fn folder_aliases(class: &str) -> &'static [&'static str] {
    match class {
        COVID => &["covid", "covid-19", "covid19"],
        PNEUMONIA => &["pneumonia"],
        TUBERCULOSIS => &["tuberculosis", "tb"],
        HEALTHY => &["healthy", "normal"],
        _ => &[],
    }
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

/// Image files of `class` directly inside its folder under `root`, sorted.
pub fn list_class_images(root: &Path, class: &str) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::Data(format!("source directory {} does not exist", root.display())));
    }
    let aliases = folder_aliases(class);
    let mut files = Vec::new();
    let entries = std::fs::read_dir(root).map_err(|e| Error::path_io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::path_io(root, e))?;
        let name = entry.file_name().to_string_lossy().to_ascii_lowercase();
        if !entry.path().is_dir() || !(name == class || aliases.contains(&name.as_str())) {
            continue;
        }
        let dir = entry.path();
        for f in std::fs::read_dir(&dir).map_err(|e| Error::path_io(&dir, e))? {
            let p = f.map_err(|e| Error::path_io(&dir, e))?.path();
            if p.is_file() && is_image(&p) {
                files.push(p);
            }
        }
    }
    files.sort();
    Ok(files)
}

fn sample_ref(root: &Path, path: PathBuf, class: &str, source: CohortSource) -> Result<SampleRef> {
    let rel = path.strip_prefix(root).unwrap_or(&path);
    let rel: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
    let id = format!("{source}/{}", rel.join("/"));
    check_csv_safe(&id, "sample id")?;
    check_csv_safe(&path.to_string_lossy(), "path")?;
    Ok(SampleRef {
        id,
        path,
        label: class.to_string(),
        source,
    })
}

/// Selects `k` of `candidates` uniformly at random. Candidates are sorted
/// first so the result does not depend on directory listing order.
fn choose(mut candidates: Vec<PathBuf>, k: usize, seed: u64, label: &str) -> Vec<PathBuf> {
    candidates.sort();
    let mut rng = rng_for(seed, label);
    candidates.shuffle(&mut rng);
    candidates.truncate(k);
    candidates.sort();
    candidates
}

/// Builds one of the four recipes from the cohort directories.
pub fn compose_dataset(recipe: Recipe, dirs: &SourceDirs, seed: u64) -> Result<DatasetManifest> {
    let draws = recipe.draws();
    // resolve every directory before doing any work
    for d in &draws {
        for (src, _) in &d.parts {
            let dir = dirs
                .get(*src)
                .ok_or_else(|| Error::Config(format!("{recipe} needs a directory for {src}")))?;
            if !dir.is_dir() {
                return Err(Error::Data(format!("source directory {} does not exist", dir.display())));
            }
        }
    }
    let mut samples = Vec::new();
    for d in &draws {
        let mut available = Vec::new();
        for (src, _) in &d.parts {
            available.push(list_class_images(dirs.get(*src).expect("checked"), d.class)?);
        }
        let quotas = allocate(d, &available)?;
        for (((src, _), files), k) in d.parts.iter().zip(available).zip(quotas) {
            let root = dirs.get(*src).expect("checked");
            let mut picked = Vec::with_capacity(k);
            for p in choose(files, k, seed, &format!("compose/{src}/{}", d.class)) {
                picked.push(sample_ref(root, p, d.class, *src)?);
            }
            picked.sort_by(|a, b| a.id.cmp(&b.id));
            samples.extend(picked);
        }
    }
    let present: Vec<&str> = draws.iter().map(|d| d.class).collect();
    let manifest = DatasetManifest {
        name: recipe.to_string(),
        classes: VOCABULARY.iter().filter(|c| present.contains(c)).map(|c| c.to_string()).collect(),
        samples,
        seed,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// How many images to take from each part of a draw.
fn allocate(d: &Draw, available: &[Vec<PathBuf>]) -> Result<Vec<usize>> {
    let have: Vec<usize> = available.iter().map(Vec::len).collect();
    if !d.rebalance {
        for ((src, need), &n) in d.parts.iter().zip(&have) {
            if n < *need {
                return Err(Error::Shortfall {
                    class: d.class.into(),
                    source_tag: src.to_string(),
                    needed: *need,
                    available: n,
                });
            }
        }
        return Ok(d.parts.iter().map(|p| p.1).collect());
    }
    let total: usize = d.parts.iter().map(|p| p.1).sum();
    let supply: usize = have.iter().sum();
    if supply < total {
        let names: Vec<_> = d.parts.iter().map(|p| p.0.name()).collect();
        return Err(Error::Shortfall {
            class: d.class.into(),
            source_tag: names.join("+"),
            needed: total,
            available: supply,
        });
    }
    let mut take: Vec<usize> = d.parts.iter().zip(&have).map(|(p, &n)| p.1.min(n)).collect();
    let mut missing = total - take.iter().sum::<usize>();
    for (t, &n) in take.iter_mut().zip(&have) {
        let extra = (n - *t).min(missing);
        *t += extra;
        missing -= extra;
    }
    debug_assert_eq!(missing, 0);
    Ok(take)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_totals() {
        let c = Recipe::Dxr4.expected_counts();
        assert_eq!(c, vec![(COVID, 69), (PNEUMONIA, 300), (TUBERCULOSIS, 310), (HEALTHY, 330)]);
        assert_eq!(Recipe::Dxr3.expected_counts().iter().map(|c| c.1).sum::<usize>(), 306);
        assert_eq!("dxr2".parse::<Recipe>().unwrap(), Recipe::Dxr2);
    }

    #[test]
    fn rebalancing_covers_a_small_cohort() {
        let d = &Recipe::Dxr4.draws()[3];
        let avail = |n| vec![PathBuf::new(); n];
        let take = allocate(d, &[avail(500), avail(500), avail(79)]).unwrap();
        assert_eq!(take, vec![141, 110, 79]);
        assert!(allocate(d, &[avail(100), avail(100), avail(100)]).is_err());
    }
}
