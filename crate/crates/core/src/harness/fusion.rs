use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{candidates_for, fit, fit_on_seen, RunOptions, Scoring};
use crate::data::{ClassId, ClassSplit, Dataset, Hyperparams};
use crate::error::{LseError, Result};
use crate::inference::{predict_batch, Candidates, FusionWeights};
use crate::metrics::per_class_accuracy;

/// How grid points are scored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionProtocol {
    /// Hold out a seeded subset of the seen classes (at least two, about
    /// `holdout_fraction` of them), train on the rest and score there.
    ClassValidation { seed: u64, holdout_fraction: f64 },
    /// Score directly on the unseen test classes. This tunes on test data
    /// and is only meant for reproducing published protocols.
    UnseenTest,
}

impl FusionProtocol {
    pub fn label(&self) -> &'static str {
        match self {
            FusionProtocol::ClassValidation { .. } => "class-validation",
            FusionProtocol::UnseenTest => "unseen-test (protocol-leaking)",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionSearch {
    pub best: FusionWeights,
    pub best_score: f64,
    /// Every grid point with its per-class accuracy, in enumeration order.
    pub table: Vec<(Vec<f64>, f64)>,
}

/// All weight vectors with `k` entries that are multiples of `step` and sum
/// to one, in ascending lexicographic order.
pub fn simplex_grid(k: usize, step: f64) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(LseError::invalid("simplex grid needs at least one modality"));
    }
    let n = (1.0 / step).round();
    if !(step > 0.0) || n < 1.0 || (n * step - 1.0).abs() > 1e-9 {
        return Err(LseError::invalid(format!("grid step {step} must divide 1 evenly")));
    }
    let n = n as usize;
    fn rec(k: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for v in 0..=left {
            prefix.push(v);
            rec(k - 1, left - v, prefix, out);
            prefix.pop();
        }
    }
    let mut counts = Vec::new();
    rec(k, n, &mut Vec::new(), &mut counts);
    Ok(counts
        .into_iter()
        .map(|c| c.into_iter().map(|v| v as f64 / n as f64).collect())
        .collect())
}

/// Grid search of fusion weights over `modalities`; ties keep the
/// lexicographically first weight vector.
pub fn search_fusion_weights(
    dataset: &Dataset,
    hyper: Hyperparams,
    modalities: &[&str],
    grid_step: f64,
    protocol: FusionProtocol,
    opts: &RunOptions,
) -> Result<FusionSearch> {
    if modalities.len() < 2 {
        return Err(LseError::invalid("fusion search needs at least 2 semantic modalities"));
    }
    let grid = simplex_grid(modalities.len(), grid_step)?;
    // the model is trained on all listed modalities, whatever the weights
    let uniform = FusionWeights::new(modalities.iter().map(|m| (m.to_string(), 1.0)).collect())?;
    let mut opts = opts.clone();
    opts.scoring = Scoring::Fused(uniform);

    let (model, eval_ds, test_idx, candidates): (_, Dataset, Vec<usize>, Vec<ClassId>) = match protocol {
        FusionProtocol::UnseenTest => {
            let model = fit_on_seen(dataset, hyper, &opts)?;
            let unseen = dataset.split().unseen().to_vec();
            (model, dataset.clone(), dataset.instances_of(&unseen), unseen)
        }
        FusionProtocol::ClassValidation { seed, holdout_fraction } => {
            let mut seen = dataset.split().seen().to_vec();
            let k = ((holdout_fraction * seen.len() as f64).round() as usize).max(2);
            if seen.len() < k + 2 {
                return Err(LseError::invalid(format!(
                    "class validation needs at least {} seen classes, have {}",
                    k + 2,
                    seen.len()
                )));
            }
            seen.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut held: Vec<ClassId> = seen[..k].to_vec();
            held.sort_unstable();
            let train: Vec<ClassId> = dataset.split().seen().iter().copied().filter(|c| !held.contains(c)).collect();
            let mut unseen = held.clone();
            unseen.extend_from_slice(dataset.split().unseen());
            let ds = dataset.with_split(ClassSplit::new(train.clone(), unseen)?)?;
            let model = fit(&ds, &ds.instances_of(&train), hyper, &opts)?;
            let test = ds.instances_of(&held);
            (model, ds, test, held)
        }
    };
    if test_idx.is_empty() {
        return Err(LseError::invalid("fusion search: no evaluation instances"));
    }

    let recon = match candidates_for(&model, &eval_ds, &opts.scoring)? {
        Candidates::Fused(recon, _) => recon,
        Candidates::Single(_) => unreachable!("fused scoring yields fused candidates"),
    };
    let instances = eval_ds.visual().select_columns(&test_idx);
    let truth: Vec<ClassId> = test_idx.iter().map(|&j| eval_ds.labels().as_slice()[j]).collect();

    let exec = opts.train.execution;
    let scores = exec.try_map_indices(grid.len(), |g| {
        let weights = FusionWeights::new(
            modalities.iter().zip(&grid[g]).map(|(m, &w)| (m.to_string(), w)).collect(),
        )?;
        let cands = Candidates::Fused(recon.clone(), weights);
        let preds = predict_batch(&model, &instances, &cands, &candidates, crate::Execution::Sequential)?;
        per_class_accuracy(&preds.labels, &truth)
    })?;

    let mut best = 0;
    for (g, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = g;
        }
    }
    Ok(FusionSearch {
        best: FusionWeights::new(modalities.iter().zip(&grid[best]).map(|(m, &w)| (m.to_string(), w)).collect())?,
        best_score: scores[best],
        table: grid.into_iter().zip(scores).collect(),
    })
}
