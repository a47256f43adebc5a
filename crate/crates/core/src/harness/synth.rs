use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{ClassId, ClassSplit, Dataset, LabelVector, Modality, ModalityKind, ModalityMatrix, PrototypeMatrix};
use crate::error::{LseError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticSpec {
    pub name: String,
    pub dim: usize,
    /// `false` draws prototypes as pure noise, unrelated to the latent codes.
    pub informative: bool,
}

impl SemanticSpec {
    pub fn informative(name: &str, dim: usize) -> Self {
        SemanticSpec { name: name.into(), dim, informative: true }
    }

    pub fn noise(name: &str, dim: usize) -> Self {
        SemanticSpec { name: name.into(), dim, informative: false }
    }
}

/// Planted linear latent model. Classes get unit-norm latent codes, the
/// first `d_true` of them mutually orthogonal; visual instances are
/// `G_vis z_c + noise`, informative prototypes are `G_k z_c`. Classes `0..seen` are seen, the rest unseen.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    /// Defaults to two thirds of the classes.
    pub seen_classes: Option<usize>,
    pub per_class: usize,
    pub visual_dim: usize,
    pub semantic: Vec<SemanticSpec>,
    pub d_true: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn seen(&self) -> usize {
        self.seen_classes.unwrap_or(self.classes - self.classes / 3)
    }
}

/// Random `rows x cols` matrix with orthonormal columns, scaled by
/// `sqrt(rows)` so entries stay of unit order.
fn decoder(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    gaussian(rng, rows, cols).qr().q() * (rows as f64).sqrt()
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // fill column-major so the draw order is fixed by the shape alone
    let values: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_vec(rows, cols, values)
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    let seen = spec.seen();
    if seen < 2 || seen >= spec.classes {
        return Err(LseError::invalid(format!(
            "need at least 2 seen and 1 unseen class, got {seen} seen of {}",
            spec.classes
        )));
    }
    if spec.per_class == 0 || spec.d_true == 0 || spec.visual_dim == 0 {
        return Err(LseError::invalid("per-class count, latent rank and visual dim must be positive"));
    }
    if spec.semantic.is_empty() {
        return Err(LseError::invalid("at least one semantic modality is required"));
    }
    let min_dim = spec
        .semantic
        .iter()
        .filter(|s| s.informative)
        .map(|s| s.dim)
        .chain([spec.visual_dim])
        .min()
        .unwrap();
    if spec.d_true > min_dim {
        return Err(LseError::invalid(format!(
            "infeasible dims: latent rank {} exceeds the smallest informative dimension {min_dim}",
            spec.d_true
        )));
    }
    if spec.semantic.iter().any(|s| s.dim == 0) {
        return Err(LseError::invalid("semantic dimensions must be positive"));
    }
    if !(spec.noise_sigma.is_finite() && spec.noise_sigma >= 0.0) {
        return Err(LseError::invalid("noise sigma must be finite and non-negative"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let basis = gaussian(&mut rng, spec.d_true, spec.d_true).qr().q();
    let mut codes = gaussian(&mut rng, spec.d_true, spec.classes);
    for mut c in codes.column_iter_mut() {
        c.normalize_mut();
    }
    let k = spec.d_true.min(spec.classes);
    codes.columns_mut(0, k).copy_from(&basis.columns(0, k));
    let g_vis = decoder(&mut rng, spec.visual_dim, spec.d_true);
    let prototypes = spec
        .semantic
        .iter()
        .map(|s| {
            let vectors = if s.informative {
                decoder(&mut rng, s.dim, spec.d_true) * &codes
            } else {
                gaussian(&mut rng, s.dim, spec.classes)
            };
            PrototypeMatrix::new(s.name.clone(), (0..spec.classes as ClassId).collect(), vectors)
        })
        .collect::<Result<Vec<_>>>()?;

    let labels: Vec<ClassId> = (0..spec.classes as ClassId)
        .flat_map(|c| std::iter::repeat_n(c, spec.per_class))
        .collect();
    let latent = codes.select_columns(&labels.iter().map(|&c| c as usize).collect::<Vec<_>>());
    let mut visual = &g_vis * latent;
    if spec.noise_sigma > 0.0 {
        visual += gaussian(&mut rng, spec.visual_dim, labels.len()) * spec.noise_sigma;
    }

    let mut modalities = vec![Modality {
        kind: ModalityKind::Visual,
        matrix: ModalityMatrix::new("visual", visual)?,
    }];
    for p in &prototypes {
        modalities.push(Modality {
            kind: ModalityKind::Semantic,
            matrix: ModalityMatrix::new(p.modality_name(), p.expand(&labels)?)?,
        });
    }
    let class_names: BTreeMap<ClassId, String> =
        (0..spec.classes as ClassId).map(|c| (c, format!("class{c}"))).collect();
    Dataset::new(
        modalities,
        LabelVector::new(labels),
        ClassSplit::new((0..seen as ClassId).collect(), (seen as ClassId..spec.classes as ClassId).collect())?,
        prototypes,
        class_names,
    )
}
