//! Accuracy, ranking and retrieval measures, plus the evaluation report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::ClassId;
use crate::error::{LseError, Result};
use crate::inference::ranked_candidates;

fn check_pairs(pred: &[ClassId], truth: &[ClassId]) -> Result<()> {
    if truth.is_empty() {
        return Err(LseError::invalid("cannot score an empty prediction list"));
    }
    if pred.len() != truth.len() {
        return Err(LseError::dimension(format!(
            "{} predictions for {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Mean over ground-truth classes of the within-class hit rate.
pub fn per_class_accuracy(pred: &[ClassId], truth: &[ClassId]) -> Result<f64> {
    check_pairs(pred, truth)?;
    let mut tally: BTreeMap<ClassId, (usize, usize)> = BTreeMap::new();
    for (p, t) in pred.iter().zip(truth) {
        let e = tally.entry(*t).or_default();
        e.1 += 1;
        if p == t {
            e.0 += 1;
        }
    }
    let sum: f64 = tally.values().map(|&(hit, n)| hit as f64 / n as f64).sum();
    Ok(sum / tally.len() as f64)
}

pub fn per_image_accuracy(pred: &[ClassId], truth: &[ClassId]) -> Result<f64> {
    check_pairs(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Fraction of rows whose true class ranks among the `k` best columns of
/// `scores` (`instances x classes`, columns labelled by `class_ids`).
pub fn top_k_accuracy(
    scores: &DMatrix<f64>,
    class_ids: &[ClassId],
    truth: &[ClassId],
    k: usize,
) -> Result<f64> {
    if k == 0 || k > class_ids.len() {
        return Err(LseError::invalid(format!(
            "k = {k} is outside 1..={}",
            class_ids.len()
        )));
    }
    if scores.ncols() != class_ids.len() || scores.nrows() != truth.len() {
        return Err(LseError::dimension(format!(
            "score matrix is {}x{}, expected {}x{}",
            scores.nrows(),
            scores.ncols(),
            truth.len(),
            class_ids.len()
        )));
    }
    if truth.is_empty() {
        return Err(LseError::invalid("cannot score an empty prediction list"));
    }
    let mut hits = 0usize;
    for (i, t) in truth.iter().enumerate() {
        let col = class_ids.iter().position(|c| c == t).ok_or_else(|| {
            LseError::invalid(format!("true class {t} is not among the candidates"))
        })?;
        let row: Vec<f64> = scores.row(i).iter().copied().collect();
        if ranked_candidates(&row, class_ids)[..k].contains(&col) {
            hits += 1;
        }
    }
    Ok(hits as f64 / truth.len() as f64)
}

/// Non-interpolated average precision of one ranked list.
pub fn average_precision(ranking: &[usize], relevant: &BTreeSet<usize>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(LseError::invalid("query has no relevant items"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, item) in ranking.iter().enumerate() {
        if relevant.contains(item) {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

pub fn mean_average_precision(rankings: &[Vec<usize>], relevance: &[BTreeSet<usize>]) -> Result<f64> {
    if rankings.is_empty() || rankings.len() != relevance.len() {
        return Err(LseError::invalid(format!(
            "{} rankings for {} relevance sets",
            rankings.len(),
            relevance.len()
        )));
    }
    let mut sum = 0.0;
    for (q, (r, rel)) in rankings.iter().zip(relevance).enumerate() {
        sum += average_precision(r, rel)
            .map_err(|_| LseError::invalid(format!("query {q} has no relevant items")))?;
    }
    Ok(sum / rankings.len() as f64)
}

/// `counts[t][p]`: instances of true class `class_ids[t]` predicted as `class_ids[p]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub class_ids: Vec<ClassId>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.class_ids.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Header `truth\pred,<ids...>`, then one row per true class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("truth\\pred");
        for c in &self.class_ids {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
        for (c, row) in self.class_ids.iter().zip(&self.counts) {
            s.push_str(&c.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion_matrix(pred: &[ClassId], truth: &[ClassId], candidate_ids: &[ClassId]) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(LseError::dimension(format!(
            "{} predictions for {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    let index: BTreeMap<ClassId, usize> = candidate_ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let lookup = |c: &ClassId| {
        index
            .get(c)
            .copied()
            .ok_or_else(|| LseError::invalid(format!("unknown label {c}: not a candidate class")))
    };
    let mut counts = vec![vec![0u64; candidate_ids.len()]; candidate_ids.len()];
    for (p, t) in pred.iter().zip(truth) {
        counts[lookup(t)?][lookup(p)?] += 1;
    }
    Ok(ConfusionMatrix {
        class_ids: candidate_ids.to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scenario {
    Tzsl,
    UnseenUnseen,
    SeenSeen,
    UnseenTotal,
    SeenTotal,
    Zsr,
}

impl Scenario {
    pub fn tag(self) -> &'static str {
        match self {
            Scenario::Tzsl => "TZSL",
            Scenario::UnseenUnseen => "U-U",
            Scenario::SeenSeen => "S-S",
            Scenario::UnseenTotal => "U-T",
            Scenario::SeenTotal => "S-T",
            Scenario::Zsr => "ZSR",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Scenario {
    type Err = LseError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "TZSL" => Scenario::Tzsl,
            "U-U" | "UU" => Scenario::UnseenUnseen,
            "S-S" | "SS" => Scenario::SeenSeen,
            "U-T" | "UT" => Scenario::UnseenTotal,
            "S-T" | "ST" => Scenario::SeenTotal,
            "ZSR" => Scenario::Zsr,
            _ => return Err(LseError::invalid(format!("unknown scenario `{s}`"))),
        })
    }
}

impl Serialize for Scenario {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.tag())
    }
}

/// Settings a report was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Provenance {
    pub lambda: f64,
    pub latent_dim: usize,
    pub fast_lse: bool,
    pub standardize: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub lambda_grid: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub dim_grid: Vec<usize>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub fusion_weights: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fusion_protocol: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scenario: Scenario,
    pub per_class_accuracy: f64,
    pub per_image_accuracy: f64,
    pub topk: BTreeMap<usize, f64>,
    pub map_score: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub class_names: BTreeMap<ClassId, String>,
    pub test_instances: usize,
    pub provenance: Provenance,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    scenario: Scenario,
    per_class_accuracy: f64,
    per_image_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    map: Option<f64>,
    test_instances: usize,
    warnings: &'a [String],
    topk: BTreeMap<String, f64>,
    provenance: &'a Provenance,
    class_names: BTreeMap<String, &'a str>,
    confusion: &'a ConfusionMatrix,
}

impl EvalReport {
    /// Builds a report from predictions over `candidate_ids`, filling the
    /// confusion matrix, accuracies and the requested top-k entries
    /// (k values above the candidate count are skipped).
    pub fn from_predictions(
        scenario: Scenario,
        pred: &[ClassId],
        truth: &[ClassId],
        scores: &DMatrix<f64>,
        candidate_ids: &[ClassId],
        topk: &[usize],
    ) -> Result<Self> {
        let confusion = confusion_matrix(pred, truth, candidate_ids)?;
        let mut tk = BTreeMap::new();
        for &k in topk.iter().filter(|&&k| k >= 1 && k <= candidate_ids.len()) {
            tk.insert(k, top_k_accuracy(scores, candidate_ids, truth, k)?);
        }
        Ok(EvalReport {
            scenario,
            per_class_accuracy: per_class_accuracy(pred, truth)?,
            per_image_accuracy: per_image_accuracy(pred, truth)?,
            topk: tk,
            map_score: None,
            confusion,
            class_names: BTreeMap::new(),
            test_instances: truth.len(),
            provenance: Provenance::default(),
            warnings: Vec::new(),
        })
    }

    /// Report as a TOML document.
    pub fn to_toml(&self) -> String {
        let doc = ReportDoc {
            scenario: self.scenario,
            per_class_accuracy: self.per_class_accuracy,
            per_image_accuracy: self.per_image_accuracy,
            map: self.map_score,
            test_instances: self.test_instances,
            warnings: &self.warnings,
            topk: self.topk.iter().map(|(k, v)| (format!("top{k}"), *v)).collect(),
            provenance: &self.provenance,
            class_names: self.class_names.iter().map(|(k, v)| (k.to_string(), v.as_str())).collect(),
            confusion: &self.confusion,
        };
        toml::to_string(&doc).expect("report serializes")
    }

    pub const CSV_HEADER: &'static str =
        "scenario,per_class_accuracy,per_image_accuracy,top1,top5,map,test_instances,lambda,latent_dim,fast_lse";

    /// One row matching [`CSV_HEADER`](Self::CSV_HEADER); absent values are empty.
    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.scenario,
            self.per_class_accuracy,
            self.per_image_accuracy,
            opt(self.topk.get(&1).copied()),
            opt(self.topk.get(&5).copied()),
            opt(self.map_score),
            self.test_instances,
            self.provenance.lambda,
            self.provenance.latent_dim,
            self.provenance.fast_lse
        )
    }
}
