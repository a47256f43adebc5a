//! Zero-shot prediction in the visual space.
//!
//! Class prototypes are pushed through the latent space into visual
//! features (`U_vis^T U_sem a`) and test instances are matched to them by
//! cosine similarity. Several semantic modalities can be fused with
//! non-negative weights.

use std::io::Write;

use nalgebra::{DMatrix, DVectorView};

use crate::data::{ClassId, ModalityMatrix, PrototypeMatrix};
use crate::error::{LseError, Result};
use crate::exec::Execution;
use crate::lse::LseModel;

/// Visual-space class representatives reconstructed from one semantic modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedPrototypes {
    pub class_ids: Vec<ClassId>,
    /// `visual dim x classes`
    pub vectors: DMatrix<f64>,
    pub source_modality: String,
}

impl ReconstructedPrototypes {
    /// Restricts to `classes`, in that order.
    pub fn select(&self, classes: &[ClassId]) -> Result<Self> {
        let idx = classes
            .iter()
            .map(|c| {
                self.class_ids.iter().position(|x| x == c).ok_or_else(|| {
                    LseError::invalid(format!(
                        "candidate class {c} has no reconstructed prototype from `{}`",
                        self.source_modality
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ReconstructedPrototypes {
            class_ids: classes.to_vec(),
            vectors: self.vectors.select_columns(&idx),
            source_modality: self.source_modality.clone(),
        })
    }
}

pub fn reconstruct_prototypes(
    model: &LseModel,
    protos: &PrototypeMatrix,
    visual_modality: &str,
    semantic_modality: &str,
) -> Result<ReconstructedPrototypes> {
    let unknown = |n: &str| LseError::invalid(format!("model has no modality `{n}`"));
    let u_vis = model.encoder(visual_modality).ok_or_else(|| unknown(visual_modality))?;
    let u_sem = model.encoder(semantic_modality).ok_or_else(|| unknown(semantic_modality))?;
    if protos.dim() != u_sem.ncols() {
        return Err(LseError::dimension(format!(
            "prototypes have dimension {}, encoder `{semantic_modality}` expects {}",
            protos.dim(),
            u_sem.ncols()
        )));
    }
    let a = model.transform(semantic_modality, protos.vectors())?;
    let latent = u_sem * a;
    Ok(ReconstructedPrototypes {
        class_ids: protos.class_ids().to_vec(),
        vectors: u_vis.tr_mul(&latent),
        source_modality: semantic_modality.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub class_id: ClassId,
    /// One score per prototype column, in prototype order.
    pub scores: Vec<f64>,
}

/// Index of the best score; ties go to the lowest class id. `None` if every
/// score is `-inf`.
pub(crate) fn argmax_by_class(scores: &[f64], class_ids: &[ClassId]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &s) in scores.iter().enumerate() {
        if s == f64::NEG_INFINITY {
            continue;
        }
        best = match best {
            None => Some(k),
            Some(b) if s > scores[b] || (s == scores[b] && class_ids[k] < class_ids[b]) => Some(k),
            keep => keep,
        };
    }
    best
}

fn norm(v: DVectorView<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Cosine of `x` against every column; zero columns score `-inf`.
pub(crate) fn cosine_scores(x: DVectorView<'_, f64>, protos: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.len() != protos.nrows() {
        return Err(LseError::dimension(format!(
            "instance has {} features, prototypes have {}",
            x.len(),
            protos.nrows()
        )));
    }
    let nx = norm(x);
    if nx == 0.0 {
        return Err(LseError::invalid("cannot classify the zero vector"));
    }
    Ok(protos
        .column_iter()
        .map(|p| {
            let np = norm(p);
            if np == 0.0 {
                f64::NEG_INFINITY
            } else {
                x.dot(&p) / (nx * np)
            }
        })
        .collect())
}

pub fn classify(instance: DVectorView<'_, f64>, protos: &ReconstructedPrototypes) -> Result<Classification> {
    let scores = cosine_scores(instance, &protos.vectors)?;
    let best = argmax_by_class(&scores, &protos.class_ids)
        .ok_or_else(|| LseError::invalid("no valid candidate: every prototype is zero"))?;
    Ok(Classification {
        class_id: protos.class_ids[best],
        scores,
    })
}

/// Non-negative per-modality weights, at least one positive.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    weights: Vec<(String, f64)>,
}

impl FusionWeights {
    pub fn new(weights: Vec<(String, f64)>) -> Result<Self> {
        if let Some((name, w)) = weights.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err(LseError::invalid(format!(
                "fusion weight for `{name}` must be finite and non-negative, got {w}"
            )));
        }
        if !weights.iter().any(|(_, w)| *w > 0.0) {
            return Err(LseError::invalid("at least one fusion weight must be positive"));
        }
        Ok(FusionWeights { weights })
    }

    pub fn one_hot(name: &str) -> Self {
        FusionWeights {
            weights: vec![(name.to_string(), 1.0)],
        }
    }

    pub fn weights(&self) -> &[(String, f64)] {
        &self.weights
    }

    pub fn weight(&self, name: &str) -> Option<f64> {
        self.weights.iter().find(|(n, _)| n == name).map(|(_, w)| *w)
    }
}

fn check_fusion_inputs(protos: &[ReconstructedPrototypes], weights: &FusionWeights) -> Result<()> {
    let first = protos
        .first()
        .ok_or_else(|| LseError::invalid("fusion needs at least one prototype set"))?;
    if let Some(p) = protos.iter().find(|p| p.class_ids != first.class_ids) {
        return Err(LseError::invalid(format!(
            "class-id order of `{}` differs from `{}`",
            p.source_modality, first.source_modality
        )));
    }
    if weights.weights.len() != protos.len()
        || protos.iter().any(|p| weights.weight(&p.source_modality).is_none())
    {
        return Err(LseError::invalid(
            "fusion weights must cover exactly the listed modalities",
        ));
    }
    Ok(())
}

/// Weighted sum of cosine scores across modalities. Zero-weight modalities
/// are skipped entirely, so a one-hot weight reproduces [`classify`].
pub fn classify_fused(
    instance: DVectorView<'_, f64>,
    protos: &[ReconstructedPrototypes],
    weights: &FusionWeights,
) -> Result<Classification> {
    check_fusion_inputs(protos, weights)?;
    let mut total: Option<Vec<f64>> = None;
    for p in protos {
        let w = weights.weight(&p.source_modality).unwrap();
        if w == 0.0 {
            continue;
        }
        let scores = cosine_scores(instance, &p.vectors)?;
        total = Some(match total {
            None => scores.into_iter().map(|s| if w == 1.0 { s } else { w * s }).collect(),
            Some(acc) => acc.into_iter().zip(scores).map(|(a, s)| a + w * s).collect(),
        });
    }
    let scores = total.expect("at least one positive weight");
    let class_ids = &protos[0].class_ids;
    let best = argmax_by_class(&scores, class_ids)
        .ok_or_else(|| LseError::invalid("no valid candidate: every prototype is zero"))?;
    Ok(Classification {
        class_id: class_ids[best],
        scores,
    })
}

/// Candidate prototypes for batch prediction.
#[derive(Debug, Clone)]
pub enum Candidates {
    Single(ReconstructedPrototypes),
    Fused(Vec<ReconstructedPrototypes>, FusionWeights),
}

impl Candidates {
    fn select(&self, classes: &[ClassId]) -> Result<Candidates> {
        Ok(match self {
            Candidates::Single(p) => Candidates::Single(p.select(classes)?),
            Candidates::Fused(ps, w) => Candidates::Fused(
                ps.iter().map(|p| p.select(classes)).collect::<Result<_>>()?,
                w.clone(),
            ),
        })
    }

    fn classify(&self, x: DVectorView<'_, f64>) -> Result<Classification> {
        match self {
            Candidates::Single(p) => classify(x, p),
            Candidates::Fused(ps, w) => classify_fused(x, ps, w),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// Candidate classes, in score-column order.
    pub class_ids: Vec<ClassId>,
    pub labels: Vec<ClassId>,
    /// `instances x candidates`
    pub scores: DMatrix<f64>,
}

/// Classifies every column of `instances` (raw visual features) against the
/// candidate classes `candidate_ids`.
pub fn predict_batch(
    model: &LseModel,
    instances: &ModalityMatrix,
    candidates: &Candidates,
    candidate_ids: &[ClassId],
    execution: Execution,
) -> Result<Predictions> {
    if candidate_ids.is_empty() {
        return Err(LseError::invalid("candidate class set is empty"));
    }
    let restricted = candidates.select(candidate_ids)?;
    let x = model.transform(model.visual_name(), instances.values())?;
    let results = execution.try_map_indices(x.ncols(), |j| restricted.classify(x.column(j)))?;
    let mut scores = DMatrix::zeros(results.len(), candidate_ids.len());
    for (i, r) in results.iter().enumerate() {
        for (k, s) in r.scores.iter().enumerate() {
            scores[(i, k)] = *s;
        }
    }
    Ok(Predictions {
        class_ids: candidate_ids.to_vec(),
        labels: results.iter().map(|r| r.class_id).collect(),
        scores,
    })
}

/// Candidate indices of one score row, best first (ties: lowest class id).
pub(crate) fn ranked_candidates(scores: &[f64], class_ids: &[ClassId]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(class_ids[a].cmp(&class_ids[b]))
    });
    order
}

/// One line per instance: `index,predicted,id_1,score_1,...,id_k,score_k`.
pub fn write_predictions<W: Write>(out: &mut W, preds: &Predictions, top_k: usize) -> std::io::Result<()> {
    for (i, label) in preds.labels.iter().enumerate() {
        let row: Vec<f64> = preds.scores.row(i).iter().copied().collect();
        write!(out, "{i},{label}")?;
        for k in ranked_candidates(&row, &preds.class_ids).into_iter().take(top_k) {
            write!(out, ",{},{}", preds.class_ids[k], row[k])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn protos(cols: &[&[f64]], ids: Vec<ClassId>) -> ReconstructedPrototypes {
        let rows = cols[0].len();
        ReconstructedPrototypes {
            class_ids: ids,
            vectors: DMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i]),
            source_modality: "attr".into(),
        }
    }

    #[test]
    fn self_match() {
        let p = protos(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 1.0], &[0.3, -0.2, 0.9]], vec![4, 5, 6]);
        let x = dvector![0.3, -0.2, 0.9];
        let r = classify(x.as_view(), &p).unwrap();
        assert_eq!(r.class_id, 6);
        assert!((r.scores[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_cosines() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let p = protos(&[&[s, s], &[0.0, 1.0]], vec![0, 1]);
        let r = classify(dvector![1.0, 0.0].as_view(), &p).unwrap();
        assert_eq!(r.class_id, 0);
        assert!((r.scores[0] - 0.7071067811865476).abs() < 1e-12);
        assert_eq!(r.scores[1], 0.0);
    }

    #[test]
    fn scale_invariance() {
        let p = protos(&[&[1.0, 2.0, 0.5], &[-1.0, 0.3, 2.0], &[0.2, 0.2, 0.2]], vec![0, 1, 2]);
        let x = dvector![0.7, -0.1, 1.3];
        let a = classify(x.as_view(), &p).unwrap();
        let b = classify((&x * 5.0).as_view(), &p).unwrap();
        assert_eq!(a.class_id, b.class_id);
        for (u, v) in a.scores.iter().zip(&b.scores) {
            assert!((u - v).abs() <= 1e-15, "{u} vs {v}");
        }
        // power-of-two scaling is exact in floating point
        let c = classify((&x * 8.0).as_view(), &p).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn zero_prototypes_and_zero_instance() {
        let p = protos(&[&[0.0, 0.0], &[1.0, 1.0]], vec![0, 1]);
        let r = classify(dvector![-1.0, -1.0].as_view(), &p).unwrap();
        assert_eq!(r.class_id, 1);
        assert_eq!(r.scores[0], f64::NEG_INFINITY);
        assert!(classify(dvector![0.0, 0.0].as_view(), &p).is_err());
        let all_zero = protos(&[&[0.0, 0.0]], vec![0]);
        let err = classify(dvector![1.0, 0.0].as_view(), &all_zero).unwrap_err();
        assert!(err.to_string().contains("no valid candidate"));
    }

    #[test]
    fn ties_prefer_lowest_class_id() {
        let p = protos(&[&[1.0, 0.0], &[1.0, 0.0]], vec![9, 3]);
        let r = classify(dvector![1.0, 0.0].as_view(), &p).unwrap();
        assert_eq!(r.class_id, 3);
    }

    #[test]
    fn fusion_one_hot_reduces_to_single() {
        let mut a = protos(&[&[1.0, 0.2], &[0.1, 1.0], &[0.5, 0.5]], vec![0, 1, 2]);
        let mut b = protos(&[&[0.0, 1.0], &[1.0, 0.0], &[0.9, 0.1]], vec![0, 1, 2]);
        a.source_modality = "a".into();
        b.source_modality = "b".into();
        let w = FusionWeights::new(vec![("a".into(), 1.0), ("b".into(), 0.0)]).unwrap();
        let x = dvector![0.8, 0.3];
        let fused = classify_fused(x.as_view(), &[a.clone(), b.clone()], &w).unwrap();
        assert_eq!(fused, classify(x.as_view(), &a).unwrap());
    }

    #[test]
    fn fusion_linearity_with_identical_modalities() {
        let a = protos(&[&[1.0, 0.2], &[0.1, 1.0], &[0.5, 0.5]], vec![0, 1, 2]);
        let mut b = a.clone();
        b.source_modality = "b".into();
        let w = FusionWeights::new(vec![("attr".into(), 0.5), ("b".into(), 2.0)]).unwrap();
        let x = dvector![0.3, 0.9];
        let single = classify(x.as_view(), &a).unwrap();
        let fused = classify_fused(x.as_view(), &[a, b], &w).unwrap();
        assert_eq!(single.class_id, fused.class_id);
        for (s, f) in single.scores.iter().zip(&fused.scores) {
            assert!((2.5 * s - f).abs() < 1e-14);
        }
    }

    #[test]
    fn fusion_matches_direct_sum() {
        // two modalities disagreeing on three classes
        let mut a = protos(&[&[1.0, 0.0], &[0.6, 0.8], &[0.0, 1.0]], vec![0, 1, 2]);
        let mut b = protos(&[&[0.0, 1.0], &[0.8, 0.6], &[1.0, 0.1]], vec![0, 1, 2]);
        a.source_modality = "a".into();
        b.source_modality = "b".into();
        let w = FusionWeights::new(vec![("a".into(), 0.7), ("b".into(), 0.3)]).unwrap();
        let x = dvector![0.9, 0.2];
        let fused = classify_fused(x.as_view(), &[a.clone(), b.clone()], &w).unwrap();
        let cos = |p: &DMatrix<f64>, j: usize| {
            let c = p.column(j);
            x.dot(&c) / (x.norm() * c.norm())
        };
        let brute: Vec<f64> = (0..3).map(|j| 0.7 * cos(&a.vectors, j) + 0.3 * cos(&b.vectors, j)).collect();
        let best = (0..3).max_by(|&i, &j| brute[i].total_cmp(&brute[j])).unwrap();
        assert_eq!(fused.class_id, best as ClassId);
        for (f, e) in fused.scores.iter().zip(&brute) {
            assert!((f - e).abs() < 1e-14);
        }
    }

    #[test]
    fn fusion_rejects_bad_inputs() {
        assert!(FusionWeights::new(vec![("a".into(), -0.1), ("b".into(), 1.0)]).is_err());
        assert!(FusionWeights::new(vec![("a".into(), 0.0)]).is_err());
        let a = protos(&[&[1.0, 0.0], &[0.0, 1.0]], vec![0, 1]);
        let mut b = protos(&[&[1.0, 0.0], &[0.0, 1.0]], vec![1, 0]);
        b.source_modality = "b".into();
        let w = FusionWeights::new(vec![("attr".into(), 0.5), ("b".into(), 0.5)]).unwrap();
        let err = classify_fused(dvector![1.0, 0.0].as_view(), &[a.clone(), b], &w).unwrap_err();
        assert!(err.to_string().contains("class-id order"));
        let w1 = FusionWeights::one_hot("other");
        assert!(classify_fused(dvector![1.0, 0.0].as_view(), &[a], &w1).is_err());
    }

    #[test]
    fn ranking_and_output_format() {
        let preds = Predictions {
            class_ids: vec![7, 3, 5],
            labels: vec![3],
            scores: DMatrix::from_row_slice(1, 3, &[0.5, 0.9, 0.5]),
        };
        let mut out = Vec::new();
        write_predictions(&mut out, &preds, 2).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0,3,3,0.9,5,0.5\n");
    }
}
