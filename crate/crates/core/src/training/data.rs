use std::collections::HashMap;

use rayon::prelude::*;

use crate::datasets::DatasetManifest;
use crate::error::{Error, Result};
use crate::preprocess::{load_gray, GrayImage, PreprocessConfig};

/// Labelled images after deterministic preprocessing, ready for batching.
///
/// `images` may be empty for label-only sets, which only the stub
/// classifiers accept.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSet {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub images: Vec<GrayImage>,
    pub classes: Vec<String>,
}

impl PreparedSet {
    /// Preprocesses already decoded images.
    pub fn from_images(
        ids: Vec<String>,
        labels: Vec<usize>,
        raw: &[GrayImage],
        classes: Vec<String>,
        preprocess: &PreprocessConfig,
    ) -> Result<Self> {
        if raw.len() != ids.len() {
            return Err(Error::Shape(format!("{} images for {} ids", raw.len(), ids.len())));
        }
        let images = raw.par_iter().map(|img| preprocess.apply(img)).collect::<Result<Vec<_>>>()?;
        let set = PreparedSet {
            ids,
            labels,
            images,
            classes,
        };
        set.check()?;
        Ok(set)
    }

    /// Loads and preprocesses every image of the manifest.
    pub fn from_manifest(manifest: &DatasetManifest, preprocess: &PreprocessConfig) -> Result<Self> {
        let images = manifest
            .samples
            .par_iter()
            .map(|s| preprocess.apply(&load_gray(&s.path)?))
            .collect::<Result<Vec<_>>>()?;
        let set = PreparedSet {
            images,
            ..Self::labels_only(manifest)?
        };
        set.check()?;
        Ok(set)
    }

    /// Ids and labels without pixels.
    pub fn labels_only(manifest: &DatasetManifest) -> Result<Self> {
        manifest.validate()?;
        Ok(PreparedSet {
            ids: manifest.samples.iter().map(|s| s.id.clone()).collect(),
            labels: manifest.labels()?,
            images: Vec::new(),
            classes: manifest.classes.clone(),
        })
    }

    fn check(&self) -> Result<()> {
        if self.labels.len() != self.ids.len() {
            return Err(Error::Shape(format!("{} labels for {} ids", self.labels.len(), self.ids.len())));
        }
        if !self.images.is_empty() && self.images.len() != self.ids.len() {
            return Err(Error::Shape(format!("{} images for {} ids", self.images.len(), self.ids.len())));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.classes.len()) {
            return Err(Error::Input(format!("label index {bad} outside {} classes", self.classes.len())));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn has_images(&self) -> bool {
        !self.images.is_empty() || self.ids.is_empty()
    }

    /// Side length of the (square) images, if any.
    pub fn image_size(&self) -> Option<usize> {
        self.images.first().map(|i| i.width())
    }

    /// The samples with the given ids, in the order given.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let rows = ids
            .iter()
            .map(|id| index.get(id.as_str()).copied().ok_or_else(|| Error::Data(format!("unknown sample id {id:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedSet {
            ids: ids.to_vec(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            images: if self.images.is_empty() {
                Vec::new()
            } else {
                rows.iter().map(|&r| self.images[r].clone()).collect()
            },
            classes: self.classes.clone(),
        })
    }
}
