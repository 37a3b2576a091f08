//! Flat on-disk weight container: `index.json` + `weights.bin`.

use std::collections::BTreeMap;
use std::path::Path;

use cxrfuse_nn::{Param, Parameters, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use super::Backbone;
use crate::error::{config, Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const INDEX_FILE: &str = "index.json";
const BLOB_FILE: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Named float32 tensors plus a source tag (e.g. `imagenet`).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightArchive {
    pub source: String,
    pub format_version: u32,
    entries: BTreeMap<String, ArchiveEntry>,
}

#[derive(Serialize, Deserialize)]
struct Index {
    format_version: u32,
    source: String,
    tensors: BTreeMap<String, IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    length: usize,
}

impl WeightArchive {
    pub fn new(source: impl Into<String>) -> Self {
        WeightArchive {
            source: source.into(),
            format_version: FORMAT_VERSION,
            entries: BTreeMap::new(),
        }
    }

    /// Snapshot of every parameter of `model`, with `strip_prefix` removed
    /// from names that carry it.
    pub fn from_params<T: Scalar, M: Parameters<T> + ?Sized>(source: &str, model: &M, strip_prefix: &str) -> Self {
        let mut archive = WeightArchive::new(source);
        model.visit(&mut |p| {
            let name = canonical(&p.name, strip_prefix).to_string();
            let data = p.value.cast::<f32>().into_data();
            archive.entries.insert(
                name,
                ArchiveEntry {
                    shape: p.value.shape().to_vec(),
                    data,
                },
            );
        });
        archive
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Load(format!("{name}: shape {shape:?} needs {n} values, got {}", data.len())));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::Load(format!("duplicate tensor name {name}")));
        }
        self.entries.insert(name, ArchiveEntry { shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveEntry> {
        self.entries.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<ArchiveEntry> {
        self.entries.remove(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArchiveEntry> {
        self.entries.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        crate::error::ensure_dir(dir)?;
        let mut blob = Vec::new();
        let mut tensors = BTreeMap::new();
        for (name, e) in &self.entries {
            let offset = blob.len();
            for v in &e.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            tensors.insert(
                name.clone(),
                IndexEntry {
                    shape: e.shape.clone(),
                    dtype: "float32".into(),
                    offset,
                    length: blob.len() - offset,
                },
            );
        }
        let index = Index {
            format_version: self.format_version,
            source: self.source.clone(),
            tensors,
        };
        let blob_path = dir.join(BLOB_FILE);
        std::fs::write(&blob_path, &blob).map_err(|e| Error::path_io(&blob_path, e))?;
        let index_path = dir.join(INDEX_FILE);
        let json = serde_json::to_string_pretty(&index)?;
        std::fs::write(&index_path, json + "\n").map_err(|e| Error::path_io(&index_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index_path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&index_path).map_err(|e| Error::path_io(&index_path, e))?;
        let index: Index =
            serde_json::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", index_path.display())))?;
        if index.format_version != FORMAT_VERSION {
            return Err(Error::Load(format!(
                "unsupported archive format version {} (expected {FORMAT_VERSION})",
                index.format_version
            )));
        }
        let blob_path = dir.join(BLOB_FILE);
        let blob = std::fs::read(&blob_path).map_err(|e| Error::path_io(&blob_path, e))?;
        let mut archive = WeightArchive::new(index.source);
        for (name, e) in index.tensors {
            if e.dtype != "float32" {
                return Err(Error::Load(format!("{name}: unsupported dtype {}", e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            if e.length != 4 * n {
                return Err(Error::Load(format!("{name}: byte length {} does not match shape {:?}", e.length, e.shape)));
            }
            let bytes = e
                .offset
                .checked_add(e.length)
                .and_then(|end| blob.get(e.offset..end))
                .ok_or_else(|| Error::Load(format!("{name}: byte range exceeds {}", blob_path.display())))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            archive.insert(name, e.shape, data)?;
        }
        Ok(archive)
    }
}

fn canonical<'n>(name: &'n str, prefix: &str) -> &'n str {
    if prefix.is_empty() {
        return name;
    }
    name.strip_prefix(prefix)
        .and_then(|rest| rest.strip_prefix('.'))
        .unwrap_or(name)
}

/// Replaces every parameter of `model` with the archive tensor of the same
/// name (after removing `strip_prefix`). Nothing is modified unless all
/// tensors are present with matching shapes. Returns the number loaded.
pub fn load_params<T: Scalar, M: Parameters<T> + ?Sized>(
    model: &mut M,
    archive: &WeightArchive,
    strip_prefix: &str,
) -> Result<usize> {
    let mut missing = Vec::new();
    for p in model.params() {
        let name = canonical(&p.name, strip_prefix);
        match archive.get(name) {
            None => missing.push(name.to_string()),
            Some(e) if e.shape != p.value.shape() => {
                return Err(Error::Load(format!(
                    "shape mismatch for {name}: archive has {:?}, model expects {:?}",
                    e.shape,
                    p.value.shape()
                )))
            }
            Some(_) => {}
        }
    }
    if !missing.is_empty() {
        return Err(Error::Load(format!(
            "archive is missing {} tensor(s): {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    let mut count = 0;
    model.visit_mut(&mut |p: &mut Param<T>| {
        let e = &archive.entries[canonical(&p.name, strip_prefix)];
        let t = Tensor::from_vec(&e.shape, e.data.clone()).expect("archive entries are shape-checked");
        p.value = t.cast();
        count += 1;
    });
    Ok(count)
}

/// Initializes a full-scale backbone from pretrained weights. Classifier
/// tensors (`fc.*`, `classifier.*`) in the archive are ignored.
pub fn load_pretrained<T: Scalar>(backbone: &mut Backbone<T>, archive: &WeightArchive) -> Result<usize> {
    if !backbone.config().channel_scale.is_full() {
        return config("pretrained weights can only be loaded at channel scale 1");
    }
    let prefix = backbone.prefix().to_string();
    load_params(backbone, archive, &prefix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::{build_backbone, BackboneConfig, BackboneKind};

    #[test]
    fn insert_checks_shape() {
        let mut a = WeightArchive::new("test");
        assert!(a.insert("w", vec![2, 3], vec![0.0; 5]).is_err());
        a.insert("w", vec![2, 3], vec![0.0; 6]).unwrap();
        assert!(a.insert("w", vec![6], vec![0.0; 6]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let mut a = WeightArchive::new("imagenet");
        a.insert("b", vec![2], vec![1.5, -2.0]).unwrap();
        a.insert("a.weight", vec![1, 2, 1, 1], vec![f32::MIN_POSITIVE, 3.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let b = WeightArchive::load(dir.path()).unwrap();
        assert_eq!(a, b);
        let index = std::fs::read_to_string(dir.path().join("index.json")).unwrap();
        assert!(index.find("a.weight").unwrap() < index.find("\"b\"").unwrap());
    }

    #[test]
    fn pretrained_loading_rejected_in_tiny_mode() {
        let mut net: Backbone<f32> = build_backbone(&BackboneConfig::tiny(BackboneKind::Resnet50), 0).unwrap();
        let archive = WeightArchive::from_params("x", &net, "");
        assert!(matches!(load_pretrained(&mut net, &archive), Err(Error::Config(_))));
        assert_eq!(load_params(&mut net, &archive, "").unwrap(), net.params().len());
    }
}
