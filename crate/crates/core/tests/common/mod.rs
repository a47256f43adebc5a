//! Independent oracles for the integration suites. Nothing here calls into
//! the library's numerical code: kernels use explicit LU solves, spectra
//! come from SVDs, optima from brute force or gradient descent.

#![allow(dead_code)]

use std::collections::BTreeMap;

use lse_core::data::{LabelVector, Modality, ModalityKind};
use lse_core::{ClassId, ClassSplit, Dataset, ModalityMatrix, PrototypeMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `rows x cols` with orthonormal rows (`rows <= cols`), uniformly random.
pub fn orthonormal_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    assert!(rows <= cols);
    gaussian(rng, cols, rows).qr().q().transpose()
}

/// `X^T (lambda X X^T + (1 - lambda) I)^{-1} X` by LU.
pub fn delta_oracle(x: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let f = x.nrows();
    let m = lambda * x * x.transpose() + (1.0 - lambda) * DMatrix::identity(f, f);
    x.transpose() * m.lu().solve(x).expect("nonsingular system")
}

/// `C X^T (lambda X X^T + (1 - lambda) I)^{-1}` by LU.
pub fn encoder_oracle(code: &DMatrix<f64>, x: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let f = x.nrows();
    let m = lambda * x * x.transpose() + (1.0 - lambda) * DMatrix::identity(f, f);
    // U M = C X^T  <=>  M U^T = X C^T  (M symmetric)
    m.lu().solve(&(x * code.transpose())).expect("nonsingular system").transpose()
}

/// Reconstruction objective of one modality with tied encoder and decoder.
pub fn theta(x: &DMatrix<f64>, code: &DMatrix<f64>, u: &DMatrix<f64>, lambda: f64) -> f64 {
    (1.0 - lambda) * (x - u.transpose() * code).norm_squared() + lambda * (code - u * x).norm_squared()
}

/// `Tr[C Delta C^T]`.
pub fn phi(x: &DMatrix<f64>, code: &DMatrix<f64>, lambda: f64) -> f64 {
    (code * delta_oracle(x, lambda) * code.transpose()).trace()
}

pub fn trace_form(code: &DMatrix<f64>, omega: &DMatrix<f64>) -> f64 {
    (code * omega * code.transpose()).trace()
}

/// `sigma^2 / (lambda sigma^2 + 1 - lambda)` for every singular value of `x`,
/// padded with zeros to `x.ncols()` and sorted descending.
pub fn spectrum_law(x: &DMatrix<f64>, lambda: f64) -> Vec<f64> {
    let mut out: Vec<f64> = x
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .map(|s| s * s / (lambda * s * s + 1.0 - lambda))
        .collect();
    out.resize(x.ncols(), 0.0);
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Largest principal angle (radians) between the row spaces of `a` and `b`.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.transpose().qr().q();
    let qb = b.transpose().qr().q();
    let cosines = (qa.transpose() * qb).svd(false, false).singular_values;
    let smallest = cosines.iter().copied().fold(f64::INFINITY, f64::min).clamp(-1.0, 1.0);
    smallest.acos()
}

/// Minimizes `(1 - lambda)|X - U^T C|^2 + lambda |C - U X|^2` over `U` by
/// plain gradient descent from zero.
pub fn gradient_descent_encoder(x: &DMatrix<f64>, code: &DMatrix<f64>, lambda: f64, iterations: usize) -> DMatrix<f64> {
    let mut u = DMatrix::zeros(code.nrows(), x.nrows());
    // Lipschitz bound of the gradient for a safe fixed step
    let lip = 2.0 * ((1.0 - lambda) * (code * code.transpose()).norm() + lambda * (x * x.transpose()).norm());
    let step = 1.0 / lip;
    for _ in 0..iterations {
        let grad = -2.0 * (1.0 - lambda) * code * (x - u.transpose() * code).transpose()
            - 2.0 * lambda * (code - &u * x) * x.transpose();
        u -= step * grad;
    }
    u
}

/// Random dataset: `classes` classes (all seen but the last `unseen`),
/// instance counts drawn in `1..=max_per_class`, a Gaussian visual modality
/// and `semantic_dims.len()` Gaussian instance-level semantic modalities
/// with unrelated random prototypes.
pub fn random_dataset(
    rng: &mut ChaCha8Rng,
    classes: usize,
    unseen: usize,
    max_per_class: usize,
    visual_dim: usize,
    semantic_dims: &[usize],
) -> Dataset {
    build_dataset(rng, classes, unseen, max_per_class, visual_dim, semantic_dims, false)
}

/// Like [`random_dataset`], but each semantic column is its class prototype.
pub fn prototype_dataset(
    rng: &mut ChaCha8Rng,
    classes: usize,
    unseen: usize,
    max_per_class: usize,
    visual_dim: usize,
    semantic_dims: &[usize],
) -> Dataset {
    build_dataset(rng, classes, unseen, max_per_class, visual_dim, semantic_dims, true)
}

fn build_dataset(
    rng: &mut ChaCha8Rng,
    classes: usize,
    unseen: usize,
    max_per_class: usize,
    visual_dim: usize,
    semantic_dims: &[usize],
    expand: bool,
) -> Dataset {
    let mut labels: Vec<ClassId> = Vec::new();
    for c in 0..classes as ClassId {
        let n = rng.random_range(1..=max_per_class);
        labels.extend(std::iter::repeat_n(c, n));
    }
    let n = labels.len();
    let mut modalities = vec![Modality {
        kind: ModalityKind::Visual,
        matrix: ModalityMatrix::new("visual", gaussian(rng, visual_dim, n)).unwrap(),
    }];
    let mut prototypes = Vec::new();
    for (k, &dim) in semantic_dims.iter().enumerate() {
        let name = format!("sem{k}");
        let instances = gaussian(rng, dim, n);
        let protos = PrototypeMatrix::new(name.clone(), (0..classes as ClassId).collect(), gaussian(rng, dim, classes)).unwrap();
        let values = if expand { protos.expand(&labels).unwrap() } else { instances };
        modalities.push(Modality { kind: ModalityKind::Semantic, matrix: ModalityMatrix::new(name, values).unwrap() });
        prototypes.push(protos);
    }
    let seen = classes - unseen;
    Dataset::new(
        modalities,
        LabelVector::new(labels),
        ClassSplit::new((0..seen as ClassId).collect(), (seen as ClassId..classes as ClassId).collect()).unwrap(),
        prototypes,
        BTreeMap::new(),
    )
    .unwrap()
}

/// Argmax with ties to the lowest index, by direct enumeration.
pub fn brute_argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = j;
        }
    }
    best
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nb == 0.0 {
        f64::NEG_INFINITY
    } else {
        dot / (na * nb)
    }
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
