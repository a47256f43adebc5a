//! Class-wise cross-validation of `(lambda, d)`.
//!
//! Seen classes are dealt into folds by a seeded shuffle. Each fold in turn
//! plays the unseen role: the model trains on the remaining seen classes and
//! is scored by per-class accuracy on the held-out classes, with only those
//! classes as candidates. Kernels and the eigendecomposition are computed
//! once per `(fold, lambda)` and every `d` is cut from the same spectrum.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{predict_subset, training_view, RunOptions};
use crate::data::{ClassId, ClassSplit, Dataset, Hyperparams};
use crate::error::{LseError, Result};
use crate::lse::PreparedTraining;
use crate::metrics::per_class_accuracy;

pub const DEFAULT_LAMBDA_GRID: [f64; 8] = [0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9];

/// Powers of two up to `max`, plus `max` itself.
pub fn default_dim_grid(max: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = std::iter::successors(Some(1usize), |d| d.checked_mul(2))
        .take_while(|&d| d <= max)
        .collect();
    if max >= 1 && grid.last() != Some(&max) {
        grid.push(max);
    }
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan {
    pub folds: usize,
    pub lambda_grid: Vec<f64>,
    pub dim_grid: Vec<usize>,
    pub seed: u64,
}

impl CvPlan {
    pub fn new(folds: usize, lambda_grid: Vec<f64>, dim_grid: Vec<usize>, seed: u64) -> Result<Self> {
        if folds < 2 {
            return Err(LseError::invalid(format!("need at least 2 folds, got {folds}")));
        }
        if lambda_grid.is_empty() || dim_grid.is_empty() {
            return Err(LseError::invalid("grid empty: lambda and dimension grids need at least one value"));
        }
        for &l in &lambda_grid {
            Hyperparams::new(l, 1)?;
        }
        if dim_grid.contains(&0) {
            return Err(LseError::invalid("latent dimensions must be positive"));
        }
        Ok(CvPlan { folds, lambda_grid, dim_grid, seed })
    }

    /// 5 folds, the default lambda grid and a geometric `d` ladder up to
    /// `min(seen instances, visual dim)`.
    pub fn default_for(dataset: &Dataset, seed: u64) -> Result<Self> {
        let n = dataset.instances_of(dataset.split().seen()).len();
        let max = n.min(dataset.visual().rows());
        CvPlan::new(5, DEFAULT_LAMBDA_GRID.to_vec(), default_dim_grid(max), seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvCell {
    pub lambda: f64,
    pub latent_dim: usize,
    /// `None` where `d` exceeds the fold's training instances.
    pub fold_scores: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub best: Hyperparams,
    pub best_score: f64,
    /// Grid order: lambda outer, dimension inner.
    pub table: Vec<CvCell>,
}

impl CvOutcome {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,latent_dim,mean_pc_accuracy,fold_scores\n");
        for c in &self.table {
            let folds: Vec<String> = c
                .fold_scores
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into()))
                .collect();
            let mean = c.mean.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
            s.push_str(&format!("{},{},{},{}\n", c.lambda, c.latent_dim, mean, folds.join(";")));
        }
        s
    }
}

/// Seen classes dealt round-robin into `folds` after a seeded shuffle of the
/// ascending class list, so the result depends only on the class set and seed.
pub fn class_folds(seen: &[ClassId], folds: usize, seed: u64) -> Result<Vec<Vec<ClassId>>> {
    if seen.len() < folds {
        return Err(LseError::invalid(format!(
            "fewer classes than folds: {} seen classes for {folds} folds",
            seen.len()
        )));
    }
    let mut classes = seen.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (i, c) in classes.into_iter().enumerate() {
        out[i % folds].push(c);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

pub fn cross_validate(dataset: &Dataset, plan: &CvPlan, opts: &RunOptions) -> Result<CvOutcome> {
    let plan = CvPlan::new(plan.folds, plan.lambda_grid.clone(), plan.dim_grid.clone(), plan.seed)?;
    let folds = class_folds(dataset.split().seen(), plan.folds, plan.seed)?;
    let n_lambda = plan.lambda_grid.len();
    let exec = opts.train.execution;

    // one job per (fold, lambda); each returns scores for every d
    let jobs = exec.try_map_indices(folds.len() * n_lambda, |job| {
        let (f, l) = (job / n_lambda, job % n_lambda);
        fold_scores(dataset, &folds[f], plan.lambda_grid[l], &plan.dim_grid, opts)
    })?;

    let mut table = Vec::new();
    for (l, &lambda) in plan.lambda_grid.iter().enumerate() {
        for (k, &d) in plan.dim_grid.iter().enumerate() {
            let fold_scores: Vec<Option<f64>> = (0..folds.len()).map(|f| jobs[f * n_lambda + l][k]).collect();
            let mean = fold_scores
                .iter()
                .copied()
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64);
            table.push(CvCell { lambda, latent_dim: d, fold_scores, mean });
        }
    }

    let mut best: Option<&CvCell> = None;
    for cell in &table {
        if let Some(m) = cell.mean {
            if best.is_none_or(|b| m > b.mean.unwrap()) {
                best = Some(cell);
            }
        }
    }
    let best = best.ok_or_else(|| {
        LseError::invalid("no grid cell is feasible: every latent dimension exceeds a fold's training instances")
    })?;
    Ok(CvOutcome {
        best: Hyperparams::new(best.lambda, best.latent_dim)?,
        best_score: best.mean.unwrap(),
        table: table.clone(),
    })
}

fn fold_scores(
    dataset: &Dataset,
    held_out: &[ClassId],
    lambda: f64,
    dims: &[usize],
    opts: &RunOptions,
) -> Result<Vec<Option<f64>>> {
    let train_classes: Vec<ClassId> = dataset
        .split()
        .seen()
        .iter()
        .copied()
        .filter(|c| !held_out.contains(c))
        .collect();
    let mut unseen: Vec<ClassId> = held_out.to_vec();
    unseen.extend_from_slice(dataset.split().unseen());
    let fold_ds = dataset.with_split(ClassSplit::new(train_classes.clone(), unseen)?)?;

    let train_idx = fold_ds.instances_of(&train_classes);
    let test_idx = fold_ds.instances_of(held_out);
    if test_idx.is_empty() {
        return Err(LseError::invalid(format!("held-out classes {held_out:?} have no instances")));
    }
    let view = training_view(&fold_ds, &train_idx, opts)?;
    // parallelism lives at the job level; keep the inner solve sequential
    let mut inner = opts.clone();
    inner.train.execution = crate::Execution::Sequential;
    let prepared = PreparedTraining::new(&view, lambda, inner.train)?;
    let truth: Vec<ClassId> = test_idx.iter().map(|&j| fold_ds.labels().as_slice()[j]).collect();

    dims.iter()
        .map(|&d| {
            if d > prepared.num_instances() {
                return Ok(None);
            }
            let model = prepared.model(d)?;
            let preds = predict_subset(&model, &fold_ds, &test_idx, held_out, &inner)?;
            per_class_accuracy(&preds.labels, &truth).map(Some)
        })
        .collect()
}
