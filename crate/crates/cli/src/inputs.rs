//! Prediction / ground-truth file pairing.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenePair {
    /// File name shared by both sides, e.g. `scene-0003.json`.
    pub name: String,
    pub pred: PathBuf,
    pub gt: PathBuf,
}

impl ScenePair {
    pub fn stem(&self) -> &str {
        self.name.strip_suffix(".json").unwrap_or(&self.name)
    }
}

fn json_files(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".json") && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Two files form one pair; two directories are paired by file name, in
/// sorted order. Every ground-truth file needs a prediction.
pub fn pair_inputs(pred: &Path, gt: &Path) -> Result<Vec<ScenePair>> {
    match (pred.is_dir(), gt.is_dir()) {
        (false, false) => {
            let name = pred
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scene.json".into());
            Ok(vec![ScenePair {
                name,
                pred: pred.to_path_buf(),
                gt: gt.to_path_buf(),
            }])
        }
        (true, true) => {
            let names = json_files(gt)?;
            if names.is_empty() {
                return Err(CliError::Validation(format!(
                    "no scene files in {}",
                    gt.display()
                )));
            }
            names
                .into_iter()
                .map(|name| {
                    let p = pred.join(&name);
                    if !p.is_file() {
                        return Err(CliError::Validation(format!(
                            "no prediction {} for ground truth {}",
                            p.display(),
                            gt.join(&name).display()
                        )));
                    }
                    Ok(ScenePair {
                        gt: gt.join(&name),
                        pred: p,
                        name,
                    })
                })
                .collect()
        }
        _ => Err(CliError::Validation(format!(
            "--pred {} and --gt {} must both be files or both be directories",
            pred.display(),
            gt.display()
        ))),
    }
}
