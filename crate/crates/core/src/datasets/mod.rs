//! Dataset manifests, recipe-driven composition and Monte Carlo splits.

mod compose;
mod split;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use compose::{compose_dataset, list_class_images, Recipe, SourceDirs};
pub use split::{monte_carlo_split, read_id_list, train_size, write_id_list, Fold, SplitOptions, SplitPlan};

pub const COVID: &str = "covid";
pub const PNEUMONIA: &str = "pneumonia";
pub const TUBERCULOSIS: &str = "tuberculosis";
pub const HEALTHY: &str = "healthy";

/// Canonical class order used by every recipe.
pub const VOCABULARY: [&str; 4] = [COVID, PNEUMONIA, TUBERCULOSIS, HEALTHY];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CohortSource {
    Source1,
    Source2,
    Source3,
}

impl CohortSource {
    pub const ALL: [CohortSource; 3] = [CohortSource::Source1, CohortSource::Source2, CohortSource::Source3];

    pub fn name(self) -> &'static str {
        match self {
            CohortSource::Source1 => "source1",
            CohortSource::Source2 => "source2",
            CohortSource::Source3 => "source3",
        }
    }
}

impl fmt::Display for CohortSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CohortSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CohortSource::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown source tag {s:?}")))
    }
}

/// One manifest row: where an image lives and what it shows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    pub id: String,
    pub path: PathBuf,
    pub label: String,
    pub source: CohortSource,
}

/// Per-class tallies in vocabulary order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassCounts(pub Vec<(String, usize)>);

impl ClassCounts {
    pub fn get(&self, class: &str) -> usize {
        self.0.iter().find(|(c, _)| c == class).map_or(0, |(_, n)| *n)
    }

    pub fn total(&self) -> usize {
        self.0.iter().map(|(_, n)| n).sum()
    }

    pub fn values(&self) -> Vec<usize> {
        self.0.iter().map(|(_, n)| *n).collect()
    }
}

impl fmt::Display for ClassCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<_> = self.0.iter().map(|(c, n)| format!("{c}: {n}")).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub classes: Vec<String>,
    pub samples: Vec<SampleRef>,
    pub seed: u64,
}

const HEADER: [&str; 4] = ["id", "path", "label", "source"];

pub(crate) fn check_csv_safe(field: &str, what: &str) -> Result<()> {
    if field.contains([',', '"', '\n', '\r']) {
        return Err(Error::Data(format!("{what} {field:?} contains a comma, quote or newline")));
    }
    Ok(())
}

impl DatasetManifest {
    /// Checks labels against the vocabulary and uniqueness of ids and paths.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let mut paths = HashSet::new();
        for s in &self.samples {
            if !self.classes.contains(&s.label) {
                return Err(Error::Data(format!("sample {} has label {:?} outside {:?}", s.id, s.label, self.classes)));
            }
            if !ids.insert(&s.id) {
                return Err(Error::Data(format!("duplicate sample id {}", s.id)));
            }
            if !paths.insert(&s.path) {
                return Err(Error::Data(format!("duplicate sample path {}", s.path.display())));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::Data(format!("label {label:?} is not in {:?}", self.classes)))
    }

    /// Class indices of all samples.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.samples.iter().map(|s| self.class_index(&s.label)).collect()
    }

    pub fn class_counts(&self) -> ClassCounts {
        class_counts(&self.classes, self.samples.iter().map(|s| s.label.as_str()))
    }

    /// Positions of `ids` within the manifest.
    pub fn indices_of(&self, ids: &[String]) -> Result<Vec<usize>> {
        let index: std::collections::HashMap<&str, usize> =
            self.samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
        ids.iter()
            .map(|id| index.get(id.as_str()).copied().ok_or_else(|| Error::Data(format!("unknown sample id {id}"))))
            .collect()
    }

    /// Manifest restricted to `ids`, keeping the full class vocabulary.
    pub fn subset(&self, ids: &[String]) -> Result<DatasetManifest> {
        let samples = self.indices_of(ids)?.into_iter().map(|i| self.samples[i].clone()).collect();
        Ok(DatasetManifest {
            name: self.name.clone(),
            classes: self.classes.clone(),
            samples,
            seed: self.seed,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        let mut w = csv::WriterBuilder::new()
            .quote_style(csv::QuoteStyle::Never)
            .from_path(path)
            .map_err(io)?;
        w.write_record(HEADER).map_err(io)?;
        for s in &self.samples {
            let p = s.path.to_str().ok_or_else(|| Error::Data(format!("non-UTF-8 path {}", s.path.display())))?;
            check_csv_safe(&s.id, "id")?;
            check_csv_safe(p, "path")?;
            w.write_record([s.id.as_str(), p, &s.label, s.source.name()]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::path_io(path, e))
    }

    /// Reads a manifest CSV. The class vocabulary is the canonical order when
    /// all labels are known names, otherwise order of first appearance.
    pub fn read_csv(path: &Path) -> Result<DatasetManifest> {
        let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        let mut r = csv::ReaderBuilder::new().from_path(path).map_err(err)?;
        let header = r.headers().map_err(err)?.clone();
        if header.iter().collect::<Vec<_>>() != HEADER {
            return Err(Error::Data(format!("{}: expected header {}", path.display(), HEADER.join(","))));
        }
        let mut samples = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(err)?;
            samples.push(SampleRef {
                id: rec[0].to_string(),
                path: PathBuf::from(&rec[1]),
                label: rec[2].to_string(),
                source: rec[3].parse()?,
            });
        }
        let mut classes: Vec<String> = Vec::new();
        for s in &samples {
            if !classes.contains(&s.label) {
                classes.push(s.label.clone());
            }
        }
        if classes.iter().all(|c| VOCABULARY.contains(&c.as_str())) {
            classes = VOCABULARY.iter().filter(|v| classes.iter().any(|c| c == *v)).map(|v| v.to_string()).collect();
        }
        let name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        let m = DatasetManifest {
            name,
            classes,
            samples,
            seed: 0,
        };
        m.validate()?;
        Ok(m)
    }
}

/// Tally of `labels` over `classes` (labels outside the vocabulary are ignored).
pub fn class_counts<'l>(classes: &[String], labels: impl IntoIterator<Item = &'l str>) -> ClassCounts {
    let mut counts: Vec<(String, usize)> = classes.iter().map(|c| (c.clone(), 0)).collect();
    for l in labels {
        if let Some(e) = counts.iter_mut().find(|(c, _)| c == l) {
            e.1 += 1;
        }
    }
    ClassCounts(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> DatasetManifest {
        let s = |id: &str, label: &str| SampleRef {
            id: id.into(),
            path: PathBuf::from(format!("/data/{id}.png")),
            label: label.into(),
            source: CohortSource::Source2,
        };
        DatasetManifest {
            name: "m".into(),
            classes: vec![PNEUMONIA.into(), HEALTHY.into()],
            samples: vec![s("a", HEALTHY), s("b", PNEUMONIA), s("c", HEALTHY)],
            seed: 0,
        }
    }

    #[test]
    fn csv_round_trip() {
        let m = manifest();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        m.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("id,path,label,source\na,/data/a.png,healthy,source2\n"));
        let back = DatasetManifest::read_csv(&p).unwrap();
        assert_eq!(back.samples, m.samples);
        assert_eq!(back.classes, m.classes);
    }

    #[test]
    fn rejects_unsafe_paths_and_duplicates() {
        let mut m = manifest();
        m.samples[0].path = PathBuf::from("/data/a,b.png");
        let dir = tempfile::tempdir().unwrap();
        assert!(m.write_csv(&dir.path().join("x.csv")).is_err());
        let mut m = manifest();
        m.samples[1].id = "a".into();
        assert!(m.validate().is_err());
    }

    #[test]
    fn counts() {
        let m = manifest();
        assert_eq!(m.class_counts().values(), vec![1, 2]);
        assert_eq!(class_counts(&m.classes, []).values(), vec![0, 0]);
        let sub = m.subset(&["c".into()]).unwrap();
        assert_eq!(sub.classes, m.classes);
        assert_eq!(sub.class_counts().values(), vec![0, 1]);
    }
}
