//! A trained model directory: weights and `config.json` from the core
//! library, plus the class names and preprocessing it was trained with.

use std::path::Path;

use cxrfuse::preprocess::PreprocessConfig;
use cxrfuse::{AnyModel, Error, Network, Result};

const CLASSES: &str = "classes.json";
const PREPROCESS: &str = "preprocess.json";

pub struct Bundle {
    pub model: AnyModel,
    pub classes: Vec<String>,
    pub preprocess: PreprocessConfig,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(Some(
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        )),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::path_io(path, e)),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, json).map_err(|e| Error::path_io(path, e))
}

impl Bundle {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save(dir)?;
        write_json(&dir.join(CLASSES), &self.classes)?;
        write_json(&dir.join(PREPROCESS), &self.preprocess)
    }

    /// Missing sidecars fall back to numbered classes and plain resizing.
    pub fn load(dir: &Path) -> Result<Self> {
        let model = AnyModel::load(dir)?;
        let k = model.num_classes();
        let classes: Vec<String> = read_json(&dir.join(CLASSES))?.unwrap_or_else(|| (0..k).map(|c| format!("class{c}")).collect());
        if classes.len() != k {
            return Err(Error::Config(format!(
                "{}: {} class names for a {k}-class model",
                dir.join(CLASSES).display(),
                classes.len()
            )));
        }
        let preprocess = read_json(&dir.join(PREPROCESS))?.unwrap_or_else(|| PreprocessConfig::with_input_size(model.input_size()));
        Ok(Bundle {
            model,
            classes,
            preprocess,
        })
    }
}
