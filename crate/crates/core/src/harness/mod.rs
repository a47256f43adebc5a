//! End-to-end evaluation pipelines.
//!
//! * conventional zero-shot classification (unseen test instances, unseen
//!   candidates), see [`run_tzsl`];
//! * the generalized scenarios U-U, S-S, U-T and S-T ([`run_gzsl`]);
//! * zero-shot retrieval scored by mAP ([`run_zsr`]);
//! * class-wise cross-validation of `(lambda, d)` ([`cross_validate`]);
//! * fusion-weight search over several semantic modalities
//!   ([`search_fusion_weights`]);
//! * a planted-model data generator ([`generate_synthetic`]).

mod cv;
mod experiment;
mod fusion;
mod synth;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ClassId, Dataset};
use crate::error::{LseError, Result};
use crate::inference::{predict_batch, reconstruct_prototypes, Candidates, FusionWeights, Predictions};
use crate::lse::{fast_compact, train_with, LseModel, TrainOptions};
use crate::metrics::{mean_average_precision, EvalReport, Provenance, Scenario};
use crate::Hyperparams;

pub use cv::{class_folds, cross_validate, default_dim_grid, CvCell, CvOutcome, CvPlan, DEFAULT_LAMBDA_GRID};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentOutcome, FusionConfig};
pub use fusion::{search_fusion_weights, simplex_grid, FusionProtocol, FusionSearch};
pub use synth::{generate_synthetic, SemanticSpec, SynthSpec};

/// Which semantic modalities score the candidates.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Scoring {
    /// The first semantic modality of the dataset.
    #[default]
    FirstSemantic,
    Semantic(String),
    Fused(FusionWeights),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Train on per-class visual means instead of all instances.
    pub fast: bool,
    pub train: TrainOptions,
    pub topk: Vec<usize>,
    pub scoring: Scoring,
    /// Turn recoverable oddities (e.g. unseen classes without test
    /// instances in retrieval) into errors.
    pub strict: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            fast: false,
            train: TrainOptions::default(),
            topk: vec![1, 5],
            scoring: Scoring::FirstSemantic,
            strict: false,
        }
    }
}

/// Test source and candidate set of a generalized scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub name: Scenario,
    pub test_source: ClassPool,
    pub candidate_set: ClassPool,
    /// Fraction of each seen class used for training in S-S / S-T.
    pub seen_train_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassPool {
    Seen,
    Unseen,
    Total,
}

impl ScenarioSpec {
    pub fn new(name: Scenario) -> Result<Self> {
        use ClassPool::*;
        let (test_source, candidate_set) = match name {
            Scenario::UnseenUnseen => (Unseen, Unseen),
            Scenario::SeenSeen => (Seen, Seen),
            Scenario::UnseenTotal => (Unseen, Total),
            Scenario::SeenTotal => (Seen, Total),
            other => {
                return Err(LseError::invalid(format!(
                    "`{other}` is not a generalized zero-shot scenario"
                )))
            }
        };
        Ok(ScenarioSpec {
            name,
            test_source,
            candidate_set,
            seen_train_fraction: 0.8,
        })
    }
}

fn pool_classes(dataset: &Dataset, pool: ClassPool) -> Vec<ClassId> {
    match pool {
        ClassPool::Seen => dataset.split().seen().to_vec(),
        ClassPool::Unseen => dataset.split().unseen().to_vec(),
        ClassPool::Total => dataset.split().all(),
    }
}

pub(crate) fn semantic_modalities(dataset: &Dataset, scoring: &Scoring) -> Result<Vec<String>> {
    let names = match scoring {
        Scoring::FirstSemantic => vec![dataset
            .semantic_names()
            .first()
            .ok_or_else(|| LseError::invalid("dataset has no semantic modality"))?
            .to_string()],
        Scoring::Semantic(n) => vec![n.clone()],
        Scoring::Fused(w) => w.weights().iter().map(|(n, _)| n.clone()).collect(),
    };
    for n in &names {
        if !dataset.semantic_names().contains(&n.as_str()) {
            return Err(LseError::invalid(format!("`{n}` is not a semantic modality of the dataset")));
        }
    }
    Ok(names)
}

/// Training view of `dataset`: instances `indices`, the visual modality plus
/// the scoring modalities, compacted to class means under fast-LSE.
pub(crate) fn training_view(dataset: &Dataset, indices: &[usize], opts: &RunOptions) -> Result<Dataset> {
    let names = semantic_modalities(dataset, &opts.scoring)?;
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let view = dataset.subset(indices).with_modalities(&names)?;
    if opts.fast {
        fast_compact(&view)
    } else {
        Ok(view)
    }
}

/// Fits a model on instances `indices` (all of which must be seen-class).
pub fn fit(dataset: &Dataset, indices: &[usize], hyper: Hyperparams, opts: &RunOptions) -> Result<LseModel> {
    train_with(&training_view(dataset, indices, opts)?, hyper, opts.train)
}

/// Reconstructed prototypes for every class of the split.
pub fn candidates_for(model: &LseModel, dataset: &Dataset, scoring: &Scoring) -> Result<Candidates> {
    let names = semantic_modalities(dataset, scoring)?;
    let visual = dataset.visual().name();
    let recon = names
        .iter()
        .map(|n| {
            let protos = dataset
                .prototypes_for(n)
                .ok_or_else(|| LseError::invalid(format!("no prototypes for `{n}`")))?;
            reconstruct_prototypes(model, protos, visual, n)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(match scoring {
        Scoring::Fused(w) => Candidates::Fused(recon, w.clone()),
        _ => Candidates::Single(recon.into_iter().next().expect("one modality")),
    })
}

pub(crate) fn predict_subset(
    model: &LseModel,
    dataset: &Dataset,
    test_idx: &[usize],
    candidate_ids: &[ClassId],
    opts: &RunOptions,
) -> Result<Predictions> {
    let candidates = candidates_for(model, dataset, &opts.scoring)?;
    let instances = dataset.visual().select_columns(test_idx);
    predict_batch(model, &instances, &candidates, candidate_ids, opts.train.execution)
}

fn provenance(hyper: Hyperparams, opts: &RunOptions, seed: Option<u64>) -> Provenance {
    Provenance {
        lambda: hyper.lambda(),
        latent_dim: hyper.latent_dim(),
        fast_lse: opts.fast,
        standardize: opts.train.standardize,
        seed,
        fusion_weights: match &opts.scoring {
            Scoring::Fused(w) => w.weights().iter().cloned().collect(),
            _ => BTreeMap::new(),
        },
        ..Provenance::default()
    }
}

/// Pairs of classes whose prototypes coincide in a scoring modality; such
/// classes are indistinguishable to the classifier.
pub fn duplicate_prototype_warnings(dataset: &Dataset, scoring: &Scoring) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for name in semantic_modalities(dataset, scoring)? {
        let p = dataset.prototypes_for(&name).expect("validated modality");
        let ids = p.class_ids();
        for a in 0..ids.len() {
            for b in a + 1..ids.len() {
                if p.vectors().column(a) == p.vectors().column(b) {
                    out.push(format!(
                        "duplicate prototypes in `{name}`: classes {} and {} are indistinguishable",
                        ids[a], ids[b]
                    ));
                }
            }
        }
    }
    for w in &out {
        log::warn!("{w}");
    }
    Ok(out)
}

fn evaluate(
    scenario: Scenario,
    model: &LseModel,
    dataset: &Dataset,
    test_idx: &[usize],
    candidate_ids: &[ClassId],
    opts: &RunOptions,
) -> Result<(EvalReport, Predictions)> {
    if test_idx.is_empty() {
        return Err(LseError::invalid(format!("{scenario}: no test instances")));
    }
    let preds = predict_subset(model, dataset, test_idx, candidate_ids, opts)?;
    let truth: Vec<ClassId> = test_idx.iter().map(|&j| dataset.labels().as_slice()[j]).collect();
    let mut report = EvalReport::from_predictions(
        scenario,
        &preds.labels,
        &truth,
        &preds.scores,
        candidate_ids,
        &opts.topk,
    )?;
    report.class_names = dataset.class_names().clone();
    report.warnings = duplicate_prototype_warnings(dataset, &opts.scoring)?;
    Ok((report, preds))
}

fn check_zero_shot_split(dataset: &Dataset) -> Result<()> {
    if dataset.split().seen().len() < 2 {
        return Err(LseError::invalid("zero-shot training needs at least 2 seen classes"));
    }
    if dataset.split().unseen().is_empty() {
        return Err(LseError::invalid("zero-shot evaluation needs at least 1 unseen class"));
    }
    Ok(())
}

/// Model trained on every seen-class instance; shared by TZSL, U-U, U-T and ZSR.
pub fn fit_on_seen(dataset: &Dataset, hyper: Hyperparams, opts: &RunOptions) -> Result<LseModel> {
    check_zero_shot_split(dataset)?;
    fit(dataset, &dataset.instances_of(dataset.split().seen()), hyper, opts)
}

/// Conventional zero-shot classification: unseen test instances against
/// unseen candidates.
pub fn run_tzsl(dataset: &Dataset, hyper: Hyperparams, opts: &RunOptions) -> Result<EvalReport> {
    let model = fit_on_seen(dataset, hyper, opts)?;
    let mut report = evaluate_unseen(Scenario::Tzsl, &model, dataset, ClassPool::Unseen, opts)?;
    report.provenance = provenance(hyper, opts, None);
    Ok(report)
}

fn evaluate_unseen(
    scenario: Scenario,
    model: &LseModel,
    dataset: &Dataset,
    candidates: ClassPool,
    opts: &RunOptions,
) -> Result<EvalReport> {
    let test = dataset.instances_of(dataset.split().unseen());
    Ok(evaluate(scenario, model, dataset, &test, &pool_classes(dataset, candidates), opts)?.0)
}

/// Stratified instance split of the seen classes: per class, a seeded
/// shuffle then the first `round(fraction * n)` instances (at least one, and
/// at least one left for testing when the class has two or more) train.
pub fn split_seen_instances(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(LseError::invalid(format!("train fraction must lie in (0, 1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for &c in dataset.split().seen() {
        let mut idx = dataset.instances_of(&[c]);
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let n = idx.len();
        let k = ((fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// One generalized zero-shot scenario. U-U and U-T train on all seen
/// instances (U-U is exactly [`run_tzsl`]); S-S and S-T train on a seeded,
/// stratified fraction of the seen instances and test on the rest.
pub fn run_gzsl(dataset: &Dataset, hyper: Hyperparams, spec: &ScenarioSpec, seed: u64, opts: &RunOptions) -> Result<EvalReport> {
    check_zero_shot_split(dataset)?;
    let mut report = match spec.test_source {
        ClassPool::Unseen => {
            let model = fit_on_seen(dataset, hyper, opts)?;
            evaluate_unseen(spec.name, &model, dataset, spec.candidate_set, opts)?
        }
        _ => {
            let (train, test) = split_seen_instances(dataset, spec.seen_train_fraction, seed)?;
            let model = fit(dataset, &train, hyper, opts)?;
            evaluate(spec.name, &model, dataset, &test, &pool_classes(dataset, spec.candidate_set), opts)?.0
        }
    };
    report.provenance = provenance(hyper, opts, (spec.test_source == ClassPool::Seen).then_some(seed));
    Ok(report)
}

/// Zero-shot retrieval: every unseen class prototype queries the pool of
/// unseen test instances, ranked by (fused) cosine score; scored by mAP.
/// The report's accuracy fields hold the U-U classification of the same pool.
pub fn run_zsr(dataset: &Dataset, hyper: Hyperparams, opts: &RunOptions) -> Result<EvalReport> {
    let model = fit_on_seen(dataset, hyper, opts)?;
    zsr_with_model(&model, dataset, opts).map(|mut r| {
        r.provenance = provenance(hyper, opts, None);
        r
    })
}

pub(crate) fn zsr_with_model(model: &LseModel, dataset: &Dataset, opts: &RunOptions) -> Result<EvalReport> {
    let unseen = dataset.split().unseen().to_vec();
    let pool = dataset.instances_of(&unseen);
    if pool.is_empty() {
        return Err(LseError::invalid("ZSR: the unseen test pool is empty"));
    }
    let (mut report, preds) = evaluate(Scenario::Zsr, model, dataset, &pool, &unseen, opts)?;
    let labels = dataset.labels().as_slice();

    let mut rankings = Vec::new();
    let mut relevance = Vec::new();
    for (k, &c) in unseen.iter().enumerate() {
        let relevant: BTreeSet<usize> = (0..pool.len()).filter(|&i| labels[pool[i]] == c).collect();
        if relevant.is_empty() {
            let msg = format!("ZSR: unseen class {c} has no test instances and is excluded");
            if opts.strict {
                return Err(LseError::invalid(msg));
            }
            log::warn!("{msg}");
            report.warnings.push(msg);
            continue;
        }
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| preds.scores[(b, k)].total_cmp(&preds.scores[(a, k)]).then(a.cmp(&b)));
        rankings.push(order);
        relevance.push(relevant);
    }
    report.map_score = Some(mean_average_precision(&rankings, &relevance)?);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic() -> Dataset {
        generate_synthetic(&SynthSpec {
            classes: 6,
            seen_classes: Some(4),
            per_class: 5,
            visual_dim: 8,
            semantic: vec![SemanticSpec::informative("attr", 5)],
            d_true: 3,
            noise_sigma: 0.1,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn scenario_specs() {
        let ut = ScenarioSpec::new(Scenario::UnseenTotal).unwrap();
        assert_eq!((ut.test_source, ut.candidate_set), (ClassPool::Unseen, ClassPool::Total));
        let ss = ScenarioSpec::new(Scenario::SeenSeen).unwrap();
        assert_eq!((ss.test_source, ss.candidate_set), (ClassPool::Seen, ClassPool::Seen));
        assert_eq!(ss.seen_train_fraction, 0.8);
        assert!(ScenarioSpec::new(Scenario::Zsr).is_err());
    }

    #[test]
    fn stratified_split_is_seeded_and_covering() {
        let ds = synthetic();
        let (tr, te) = split_seen_instances(&ds, 0.8, 3).unwrap();
        assert_eq!(tr.len(), 16);
        assert_eq!(te.len(), 4);
        let mut all: Vec<_> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, ds.instances_of(ds.split().seen()));
        for &c in ds.split().seen() {
            assert_eq!(te.iter().filter(|&&j| ds.labels().as_slice()[j] == c).count(), 1);
        }
        assert_eq!(split_seen_instances(&ds, 0.8, 3).unwrap(), (tr, te));
        assert!(split_seen_instances(&ds, 1.0, 3).is_err());
    }

    #[test]
    fn tzsl_needs_unseen_classes() {
        let ds = synthetic();
        let all_seen = ds.with_split(crate::ClassSplit::new(ds.split().all(), vec![]).unwrap()).unwrap();
        assert!(run_tzsl(&all_seen, Hyperparams::new(0.1, 3).unwrap(), &RunOptions::default()).is_err());
    }

    #[test]
    fn unknown_scoring_modality() {
        let ds = synthetic();
        let opts = RunOptions { scoring: Scoring::Semantic("nope".into()), ..Default::default() };
        assert!(run_tzsl(&ds, Hyperparams::new(0.1, 3).unwrap(), &opts).is_err());
    }
}
