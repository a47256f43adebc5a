//! Domain types for multi-modal zero-shot datasets, plus their on-disk forms.
//!
//! Matrices follow a "column = instance" layout: a modality with `F`
//! features over `N` instances is an `F x N` matrix.

mod manifest;
mod matrix_io;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{LseError, Result};

pub use manifest::{assemble_dataset, resolve_manifest_path, write_dataset, Manifest};
pub use matrix_io::{
    decode_matrix, encode_matrix, load_matrix, save_matrix, MATRIX_MAGIC, MATRIX_VERSION,
};

pub type ClassId = u32;

/// One modality's dense feature matrix (`features x instances`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityMatrix {
    name: String,
    values: DMatrix<f64>,
}

impl ModalityMatrix {
    pub fn new(name: impl Into<String>, values: DMatrix<f64>) -> Result<Self> {
        let name = name.into();
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(LseError::invalid(format!(
                "modality `{name}` must have at least one row and one column (got {}x{})",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some((r, c)) = first_non_finite(&values) {
            return Err(LseError::invalid(format!(
                "modality `{name}` has a non-finite value at row {r}, column {c}"
            )));
        }
        Ok(ModalityMatrix { name, values })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn column(&self, j: usize) -> DVectorView<'_, f64> {
        self.values.column(j)
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Columns `indices`, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Self {
        ModalityMatrix {
            name: self.name.clone(),
            values: self.values.select_columns(indices),
        }
    }
}

/// First `(row, col)` holding NaN or an infinity, scanning column-major.
pub(crate) fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    m.iter()
        .position(|v| !v.is_finite())
        .map(|i| (i % m.nrows(), i / m.nrows()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityKind {
    Visual,
    Semantic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Modality {
    pub kind: ModalityKind,
    pub matrix: ModalityMatrix,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector(Vec<ClassId>);

impl LabelVector {
    pub fn new(labels: Vec<ClassId>) -> Self {
        LabelVector(labels)
    }

    pub fn as_slice(&self) -> &[ClassId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Distinct labels, ascending.
    pub fn classes(&self) -> Vec<ClassId> {
        self.0.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }
}

/// Disjoint seen/unseen class sets, each kept sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSplit {
    seen: Vec<ClassId>,
    unseen: Vec<ClassId>,
}

impl ClassSplit {
    pub fn new(seen: Vec<ClassId>, unseen: Vec<ClassId>) -> Result<Self> {
        let seen_set: BTreeSet<_> = seen.iter().copied().collect();
        let unseen_set: BTreeSet<_> = unseen.iter().copied().collect();
        if seen_set.len() != seen.len() || unseen_set.len() != unseen.len() {
            return Err(LseError::invalid("class split lists a class id twice"));
        }
        if let Some(c) = seen_set.intersection(&unseen_set).next() {
            return Err(LseError::invalid(format!(
                "seen/unseen overlap: class {c} is in both sets"
            )));
        }
        Ok(ClassSplit {
            seen: seen_set.into_iter().collect(),
            unseen: unseen_set.into_iter().collect(),
        })
    }

    pub fn seen(&self) -> &[ClassId] {
        &self.seen
    }

    pub fn unseen(&self) -> &[ClassId] {
        &self.unseen
    }

    pub fn is_seen(&self, c: ClassId) -> bool {
        self.seen.binary_search(&c).is_ok()
    }

    pub fn is_unseen(&self, c: ClassId) -> bool {
        self.unseen.binary_search(&c).is_ok()
    }

    /// seen ∪ unseen, ascending.
    pub fn all(&self) -> Vec<ClassId> {
        let mut all: Vec<_> = self.seen.iter().chain(&self.unseen).copied().collect();
        all.sort_unstable();
        all
    }
}

/// Per-class semantic vectors (`semantic dim x classes`) for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeMatrix {
    modality_name: String,
    class_ids: Vec<ClassId>,
    vectors: DMatrix<f64>,
}

impl PrototypeMatrix {
    pub fn new(
        modality_name: impl Into<String>,
        class_ids: Vec<ClassId>,
        vectors: DMatrix<f64>,
    ) -> Result<Self> {
        let modality_name = modality_name.into();
        if class_ids.len() != vectors.ncols() {
            return Err(LseError::dimension(format!(
                "prototypes for `{modality_name}` list {} classes but have {} columns",
                class_ids.len(),
                vectors.ncols()
            )));
        }
        if vectors.nrows() == 0 {
            return Err(LseError::invalid(format!(
                "prototypes for `{modality_name}` have zero rows"
            )));
        }
        let unique: BTreeSet<_> = class_ids.iter().collect();
        if unique.len() != class_ids.len() {
            return Err(LseError::invalid(format!(
                "prototypes for `{modality_name}` list a class id twice"
            )));
        }
        if let Some((r, c)) = first_non_finite(&vectors) {
            return Err(LseError::invalid(format!(
                "prototypes for `{modality_name}` have a non-finite value at row {r}, column {c}"
            )));
        }
        Ok(PrototypeMatrix {
            modality_name,
            class_ids,
            vectors,
        })
    }

    pub fn modality_name(&self) -> &str {
        &self.modality_name
    }

    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn column_index(&self, class: ClassId) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == class)
    }

    pub fn vector(&self, class: ClassId) -> Option<DVectorView<'_, f64>> {
        self.column_index(class).map(|j| self.vectors.column(j))
    }

    /// Restricts to `classes` (in that order).
    pub fn select(&self, classes: &[ClassId]) -> Result<Self> {
        let idx = classes
            .iter()
            .map(|&c| {
                self.column_index(c).ok_or_else(|| {
                    LseError::invalid(format!(
                        "missing prototype for class {c} in modality `{}`",
                        self.modality_name
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PrototypeMatrix {
            modality_name: self.modality_name.clone(),
            class_ids: classes.to_vec(),
            vectors: self.vectors.select_columns(&idx),
        })
    }

    /// One column per label: the prototype of that instance's class.
    pub fn expand(&self, labels: &[ClassId]) -> Result<DMatrix<f64>> {
        let idx = labels
            .iter()
            .map(|&c| {
                self.column_index(c).ok_or_else(|| {
                    LseError::invalid(format!(
                        "missing prototype for class {c} in modality `{}`",
                        self.modality_name
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.vectors.select_columns(&idx))
    }
}

/// Training hyperparameters: the balance `lambda` in `[0, 1)` and the
/// latent dimensionality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    lambda: f64,
    latent_dim: usize,
}

impl Hyperparams {
    pub fn new(lambda: f64, latent_dim: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(LseError::invalid(format!(
                "lambda must lie in [0, 1), got {lambda}"
            )));
        }
        if latent_dim == 0 {
            return Err(LseError::invalid("latent dimension must be at least 1"));
        }
        Ok(Hyperparams { lambda, latent_dim })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }
}

/// Instance-aligned modalities with labels, class split and class prototypes.
///
/// Modality 0 is the visual modality. Every semantic modality has exactly
/// one prototype matrix covering all seen and unseen classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    modalities: Vec<Modality>,
    labels: LabelVector,
    split: ClassSplit,
    prototypes: Vec<PrototypeMatrix>,
    class_names: BTreeMap<ClassId, String>,
}

impl Dataset {
    pub fn new(
        modalities: Vec<Modality>,
        labels: LabelVector,
        split: ClassSplit,
        prototypes: Vec<PrototypeMatrix>,
        class_names: BTreeMap<ClassId, String>,
    ) -> Result<Self> {
        let first = modalities
            .first()
            .ok_or_else(|| LseError::invalid("dataset needs at least one modality"))?;
        if first.kind != ModalityKind::Visual {
            return Err(LseError::invalid(format!(
                "modality 0 (`{}`) must be the visual modality",
                first.matrix.name()
            )));
        }
        let mut names = BTreeSet::new();
        for m in &modalities {
            if !names.insert(m.matrix.name()) {
                return Err(LseError::invalid(format!(
                    "duplicate modality name `{}`",
                    m.matrix.name()
                )));
            }
        }
        let n = labels.len();
        for m in &modalities {
            if m.matrix.cols() != n {
                return Err(LseError::dimension(format!(
                    "instance misalignment: modality `{}` has {} instances, labels have {n}",
                    m.matrix.name(),
                    m.matrix.cols()
                )));
            }
        }
        for (j, &c) in labels.as_slice().iter().enumerate() {
            if !split.is_seen(c) && !split.is_unseen(c) {
                return Err(LseError::invalid(format!(
                    "label {c} of instance {j} is in neither the seen nor the unseen set"
                )));
            }
        }
        let all = split.all();
        for p in &prototypes {
            let m = modalities
                .iter()
                .find(|m| m.matrix.name() == p.modality_name())
                .ok_or_else(|| {
                    LseError::invalid(format!(
                        "prototypes reference unknown modality `{}`",
                        p.modality_name()
                    ))
                })?;
            if m.kind != ModalityKind::Semantic {
                return Err(LseError::invalid(format!(
                    "prototypes attached to non-semantic modality `{}`",
                    p.modality_name()
                )));
            }
            if m.matrix.rows() != p.dim() {
                return Err(LseError::dimension(format!(
                    "prototypes for `{}` have dimension {}, modality has {}",
                    p.modality_name(),
                    p.dim(),
                    m.matrix.rows()
                )));
            }
            if let Some(c) = all.iter().find(|&&c| p.column_index(c).is_none()) {
                return Err(LseError::invalid(format!(
                    "missing prototype for class {c} in modality `{}`",
                    p.modality_name()
                )));
            }
        }
        for m in modalities.iter().filter(|m| m.kind == ModalityKind::Semantic) {
            let count = prototypes
                .iter()
                .filter(|p| p.modality_name() == m.matrix.name())
                .count();
            if count != 1 {
                return Err(LseError::invalid(format!(
                    "missing prototype matrix: semantic modality `{}` has {count} prototype matrices, expected 1",
                    m.matrix.name()
                )));
            }
        }
        Ok(Dataset {
            modalities,
            labels,
            split,
            prototypes,
            class_names,
        })
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn visual(&self) -> &ModalityMatrix {
        &self.modalities[0].matrix
    }

    pub fn modality(&self, name: &str) -> Option<&Modality> {
        self.modalities.iter().find(|m| m.matrix.name() == name)
    }

    pub fn semantic_names(&self) -> Vec<&str> {
        self.modalities
            .iter()
            .filter(|m| m.kind == ModalityKind::Semantic)
            .map(|m| m.matrix.name())
            .collect()
    }

    pub fn labels(&self) -> &LabelVector {
        &self.labels
    }

    pub fn split(&self) -> &ClassSplit {
        &self.split
    }

    pub fn prototypes(&self) -> &[PrototypeMatrix] {
        &self.prototypes
    }

    pub fn prototypes_for(&self, modality: &str) -> Option<&PrototypeMatrix> {
        self.prototypes.iter().find(|p| p.modality_name() == modality)
    }

    pub fn class_names(&self) -> &BTreeMap<ClassId, String> {
        &self.class_names
    }

    pub fn num_instances(&self) -> usize {
        self.labels.len()
    }

    /// Indices of instances whose label is in `classes`, ascending.
    pub fn instances_of(&self, classes: &[ClassId]) -> Vec<usize> {
        let set: BTreeSet<_> = classes.iter().copied().collect();
        self.labels
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, c)| set.contains(c))
            .map(|(j, _)| j)
            .collect()
    }

    /// Same dataset restricted to instances `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            modalities: self
                .modalities
                .iter()
                .map(|m| Modality {
                    kind: m.kind,
                    matrix: m.matrix.select_columns(indices),
                })
                .collect(),
            labels: LabelVector(indices.iter().map(|&j| self.labels.0[j]).collect()),
            split: self.split.clone(),
            prototypes: self.prototypes.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Keeps only the named modalities (visual first), dropping prototypes of
    /// removed semantic modalities.
    pub fn with_modalities(&self, names: &[&str]) -> Result<Dataset> {
        let mut modalities = vec![self.modalities[0].clone()];
        for &name in names {
            if name == self.visual().name() {
                continue;
            }
            let m = self
                .modality(name)
                .ok_or_else(|| LseError::invalid(format!("unknown modality `{name}`")))?;
            modalities.push(m.clone());
        }
        let prototypes = self
            .prototypes
            .iter()
            .filter(|p| modalities.iter().any(|m| m.matrix.name() == p.modality_name()))
            .cloned()
            .collect();
        Dataset::new(
            modalities,
            self.labels.clone(),
            self.split.clone(),
            prototypes,
            self.class_names.clone(),
        )
    }

    /// Replaces the class split; fails if a label falls outside the new split.
    pub fn with_split(&self, split: ClassSplit) -> Result<Dataset> {
        Dataset::new(
            self.modalities.clone(),
            self.labels.clone(),
            split,
            self.prototypes.clone(),
            self.class_names.clone(),
        )
    }
}
