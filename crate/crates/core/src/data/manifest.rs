//! Dataset manifests (TOML) and their assembly into a validated [`Dataset`].
//!
//! ```toml
//! labels = "labels.txt"
//!
//! [split]
//! seen = [0, 1]
//! unseen = [2]
//!
//! [[modalities]]
//! name = "visual"
//! path = "visual.lsem"
//! kind = "visual"
//!
//! [[modalities]]      # no path: columns are expanded from the prototypes
//! name = "attributes"
//! kind = "semantic"
//!
//! [[prototypes]]
//! modality_name = "attributes"
//! path = "attributes.lsem"
//! class_ids = [0, 1, 2]
//!
//! [class_names]
//! 0 = "zebra"
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::matrix_io::write_matrix;
use super::{
    load_matrix, ClassId, ClassSplit, Dataset, LabelVector, Modality, ModalityKind,
    ModalityMatrix, PrototypeMatrix,
};
use crate::error::{LseError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub labels: PathBuf,
    pub split: SplitEntry,
    pub modalities: Vec<ModalityEntry>,
    pub prototypes: Vec<PrototypeEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub class_names: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub seen: Vec<ClassId>,
    pub unseen: Vec<ClassId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub kind: ModalityKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrototypeEntry {
    pub modality_name: String,
    pub path: PathBuf,
    pub class_ids: Vec<ClassId>,
}

impl Manifest {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| LseError::format(origin, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is always representable as TOML")
    }

    /// Builds the dataset, reading files relative to `base`.
    pub fn assemble(&self, base: &Path) -> Result<Dataset> {
        let labels = read_labels(&base.join(&self.labels))?;
        let split = ClassSplit::new(self.split.seen.clone(), self.split.unseen.clone())?;

        let prototypes = self
            .prototypes
            .iter()
            .map(|p| {
                let path = base.join(&p.path);
                let vectors = load_matrix(&path)?.into_values();
                PrototypeMatrix::new(p.modality_name.clone(), p.class_ids.clone(), vectors)
            })
            .collect::<Result<Vec<_>>>()?;

        let modalities = self
            .modalities
            .iter()
            .map(|entry| {
                let values = match &entry.path {
                    Some(p) => load_matrix(base.join(p))?.into_values(),
                    None if entry.kind == ModalityKind::Semantic => prototypes
                        .iter()
                        .find(|p| p.modality_name() == entry.name)
                        .ok_or_else(|| {
                            LseError::invalid(format!(
                                "missing prototype matrix for semantic modality `{}`",
                                entry.name
                            ))
                        })?
                        .expand(labels.as_slice())?,
                    None => {
                        return Err(LseError::invalid(format!(
                            "visual modality `{}` needs a path",
                            entry.name
                        )))
                    }
                };
                Ok(Modality {
                    kind: entry.kind,
                    matrix: ModalityMatrix::new(entry.name.clone(), values)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let class_names = self
            .class_names
            .iter()
            .map(|(k, v)| {
                k.parse::<ClassId>()
                    .map(|id| (id, v.clone()))
                    .map_err(|_| LseError::invalid(format!("class_names key `{k}` is not a class id")))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;

        Dataset::new(modalities, labels, split, prototypes, class_names)
    }
}

/// `path` may name the manifest file, a directory holding `manifest.toml`, or
/// the manifest path without its `.toml` extension.
pub fn resolve_manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        return path.join("manifest.toml");
    }
    if !path.exists() {
        let with_ext = path.with_extension("toml");
        if with_ext.exists() {
            return with_ext;
        }
    }
    path.to_path_buf()
}

pub fn assemble_dataset(manifest: impl AsRef<Path>) -> Result<Dataset> {
    let path = resolve_manifest_path(manifest.as_ref());
    let text = fs::read_to_string(&path).map_err(|e| LseError::io(&path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Manifest::from_toml(&text, &path)?.assemble(base)
}

fn read_labels(path: &Path) -> Result<LabelVector> {
    let text = fs::read_to_string(path).map_err(|e| LseError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<ClassId>().map_err(|_| {
                LseError::format(path, format!("line {}: `{}` is not a class id", i + 1, l.trim()))
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(LabelVector::new)
}

/// Writes `dataset` as a manifest plus matrix files into `dir`, returning
/// the manifest path. Semantic modalities that are plain expansions of their
/// prototypes are written without a matrix file.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| LseError::io(dir, e))?;
    let labels_path = dir.join("labels.txt");
    let mut labels = String::new();
    for l in dataset.labels().as_slice() {
        labels.push_str(&l.to_string());
        labels.push('\n');
    }
    fs::write(&labels_path, labels).map_err(|e| LseError::io(&labels_path, e))?;

    let mut modalities = Vec::new();
    for m in dataset.modalities() {
        let expanded = dataset
            .prototypes_for(m.matrix.name())
            .map(|p| p.expand(dataset.labels().as_slice()))
            .transpose()?;
        let path = if m.kind == ModalityKind::Semantic && expanded.as_ref() == Some(m.matrix.values()) {
            None
        } else {
            let file = format!("{}.lsem", m.matrix.name());
            write_matrix(m.matrix.values(), &dir.join(&file))?;
            Some(PathBuf::from(file))
        };
        modalities.push(ModalityEntry {
            name: m.matrix.name().to_string(),
            path,
            kind: m.kind,
        });
    }

    let mut prototypes = Vec::new();
    for p in dataset.prototypes() {
        let file = format!("{}.prototypes.lsem", p.modality_name());
        write_matrix(p.vectors(), &dir.join(&file))?;
        prototypes.push(PrototypeEntry {
            modality_name: p.modality_name().to_string(),
            path: PathBuf::from(file),
            class_ids: p.class_ids().to_vec(),
        });
    }

    let manifest = Manifest {
        labels: PathBuf::from("labels.txt"),
        split: SplitEntry {
            seen: dataset.split().seen().to_vec(),
            unseen: dataset.split().unseen().to_vec(),
        },
        modalities,
        prototypes,
        class_names: dataset
            .class_names()
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect(),
    };
    let path = dir.join("manifest.toml");
    fs::write(&path, manifest.to_toml()).map_err(|e| LseError::io(&path, e))?;
    Ok(path)
}
