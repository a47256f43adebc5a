use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::data::{ClassId, Dataset, LabelVector, Modality, ModalityKind, ModalityMatrix};
use crate::error::{LseError, Result};

/// Collapses a training set to one instance per seen class: visual columns
/// become per-class means, semantic columns the class prototype. Output
/// instances are ordered by class id; unseen-class instances are dropped.
pub fn fast_compact(dataset: &Dataset) -> Result<Dataset> {
    let mut members: BTreeMap<ClassId, Vec<usize>> =
        dataset.split().seen().iter().map(|&c| (c, Vec::new())).collect();
    for (j, c) in dataset.labels().as_slice().iter().enumerate() {
        if let Some(v) = members.get_mut(c) {
            v.push(j);
        }
    }
    if let Some((c, _)) = members.iter().find(|(_, v)| v.is_empty()) {
        return Err(LseError::invalid(format!(
            "empty class: seen class {c} has no instances to average"
        )));
    }
    let classes: Vec<ClassId> = members.keys().copied().collect();

    let modalities = dataset
        .modalities()
        .iter()
        .map(|m| {
            let values = match m.kind {
                ModalityKind::Semantic => dataset
                    .prototypes_for(m.matrix.name())
                    .expect("dataset invariant: semantic modalities have prototypes")
                    .expand(&classes)?,
                ModalityKind::Visual => {
                    let x = m.matrix.values();
                    let mut out = DMatrix::zeros(x.nrows(), classes.len());
                    for (k, idx) in members.values().enumerate() {
                        let mut col = out.column_mut(k);
                        for &j in idx {
                            col += x.column(j);
                        }
                        col /= idx.len() as f64;
                    }
                    out
                }
            };
            Ok(Modality {
                kind: m.kind,
                matrix: ModalityMatrix::new(m.matrix.name(), values)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Dataset::new(
        modalities,
        LabelVector::new(classes),
        dataset.split().clone(),
        dataset.prototypes().to_vec(),
        dataset.class_names().clone(),
    )
}
