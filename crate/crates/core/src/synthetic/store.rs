use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{LabeledDataset, SyntheticData, SyntheticSpec};
use crate::error::{Error, Result};
use crate::linalg::{read_matrix, write_matrix, Matrix};

const FORMAT: &str = "lgm-dataset";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    spec: SyntheticSpec,
    /// Matrix stem of the generating dictionary.
    dictionary: String,
    splits: Vec<SplitEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitEntry {
    split: String,
    clean: String,
    codes: String,
    /// `(σ, noisy matrix stem)`, in the spec's σ order.
    noisy: Vec<(f64, String)>,
}

/// Dataset directory: `manifest.json` plus one matrix per dictionary,
/// clean/code block and noisy block.
pub fn save_dataset(
    dir: &Path,
    spec: &SyntheticSpec,
    d_true: &Matrix,
    data: &SyntheticData,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(&dir.join("dictionary"), d_true)?;
    let mut splits = Vec::new();
    for (name, sets) in [("train", &data.train), ("test", &data.test)] {
        let Some(first) = sets.first() else {
            continue;
        };
        let clean = format!("{name}_clean");
        let codes = format!("{name}_codes");
        write_matrix(&dir.join(&clean), &first.clean)?;
        write_matrix(&dir.join(&codes), &first.codes)?;
        let mut noisy = Vec::new();
        for (k, set) in sets.iter().enumerate() {
            let stem = format!("{name}_noisy_{k}");
            write_matrix(&dir.join(&stem), &set.noisy)?;
            noisy.push((set.sigma, stem));
        }
        splits.push(SplitEntry {
            split: name.into(),
            clean,
            codes,
            noisy,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        spec: spec.clone(),
        dictionary: "dictionary".into(),
        splits,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

/// Inverse of [`save_dataset`]: `(spec, D_true, data)`.
pub fn load_dataset(dir: &Path) -> Result<(SyntheticSpec, Matrix, SyntheticData)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::CorruptHeader(e.to_string()))?;
    if manifest.format != FORMAT {
        return Err(Error::UnsupportedFormat(format!(
            "dataset format `{}`",
            manifest.format
        )));
    }
    let d_true = read_matrix(&dir.join(&manifest.dictionary))?;
    let mut data = SyntheticData {
        train: Vec::new(),
        test: Vec::new(),
    };
    for entry in &manifest.splits {
        let clean = read_matrix(&dir.join(&entry.clean))?;
        let codes = read_matrix(&dir.join(&entry.codes))?;
        let supports: Vec<Vec<usize>> = (0..codes.cols())
            .map(|j| {
                let c = codes.col(j);
                (0..c.len()).filter(|&i| c[i] != 0.0).collect()
            })
            .collect();
        let mut sets = Vec::new();
        for (sigma, stem) in &entry.noisy {
            let noisy = read_matrix(&dir.join(stem))?;
            if noisy.shape() != clean.shape() {
                return Err(Error::CorruptHeader(format!(
                    "{stem} does not match {}",
                    entry.clean
                )));
            }
            sets.push(LabeledDataset {
                sigma: *sigma,
                clean: clean.clone(),
                noisy,
                codes: codes.clone(),
                supports: supports.clone(),
            });
        }
        match entry.split.as_str() {
            "train" => data.train = sets,
            "test" => data.test = sets,
            other => return Err(Error::CorruptHeader(format!("unknown split `{other}`"))),
        }
    }
    Ok((manifest.spec, d_true, data))
}
