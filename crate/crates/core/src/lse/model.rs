use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use super::eigen::{solve_latent_codes_with, EigenSolver, LatentCodes, Spectrum};
use super::kernel::{aggregate_kernels, KernelMatrix, RidgeSystem};
use crate::data::{Dataset, Hyperparams, ModalityKind, ModalityMatrix};
use crate::error::{LseError, Result};
use crate::exec::Execution;

/// Eigenvalues below this fraction of the largest are treated as zero when
/// warning about `d` exceeding the kernel's rank.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainOptions {
    /// Standardize every feature to zero mean and unit variance over the
    /// training instances. The statistics travel with the model.
    pub standardize: bool,
    pub solver: EigenSolver,
    pub execution: Execution,
}

/// Per-feature affine transform `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaling {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
}

impl FeatureScaling {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.ncols() as f64;
        let mean = x.column_mean();
        let scale = DVector::from_iterator(
            x.nrows(),
            x.row_iter().zip(mean.iter()).map(|(row, &m)| {
                let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                // constant features are only centered
                if var > 0.0 { var.sqrt() } else { 1.0 }
            }),
        );
        FeatureScaling { mean, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for mut col in out.column_iter_mut() {
            for ((v, m), s) in col.iter_mut().zip(self.mean.iter()).zip(self.scale.iter()) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// Trained latent space: shared codes plus one encoder per modality.
#[derive(Debug, Clone, PartialEq)]
pub struct LseModel {
    pub(crate) hyper: Hyperparams,
    pub(crate) code: DMatrix<f64>,
    pub(crate) encoders: Vec<DMatrix<f64>>,
    pub(crate) modality_names: Vec<String>,
    pub(crate) modality_kinds: Vec<ModalityKind>,
    pub(crate) eigenvalues: Vec<f64>,
    pub(crate) scaling: Option<Vec<FeatureScaling>>,
}

impl LseModel {
    pub fn hyper(&self) -> Hyperparams {
        self.hyper
    }

    /// `d x N` latent code matrix.
    pub fn code(&self) -> &DMatrix<f64> {
        &self.code
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn modality_names(&self) -> &[String] {
        &self.modality_names
    }

    pub fn modality_kinds(&self) -> &[ModalityKind] {
        &self.modality_kinds
    }

    pub fn encoders(&self) -> &[DMatrix<f64>] {
        &self.encoders
    }

    pub fn modality_index(&self, name: &str) -> Option<usize> {
        self.modality_names.iter().position(|n| n == name)
    }

    /// `d x F` encoder of the named modality.
    pub fn encoder(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.modality_index(name).map(|i| &self.encoders[i])
    }

    pub fn scaling(&self, name: &str) -> Option<&FeatureScaling> {
        let i = self.modality_index(name)?;
        self.scaling.as_ref().map(|s| &s[i])
    }

    pub fn is_standardized(&self) -> bool {
        self.scaling.is_some()
    }

    pub fn visual_name(&self) -> &str {
        &self.modality_names[0]
    }

    /// Applies the stored standardization (if any) to raw features of `name`.
    pub fn transform(&self, name: &str, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let i = self
            .modality_index(name)
            .ok_or_else(|| LseError::invalid(format!("model has no modality `{name}`")))?;
        if x.nrows() != self.encoders[i].ncols() {
            return Err(LseError::dimension(format!(
                "modality `{name}` expects {} features, got {}",
                self.encoders[i].ncols(),
                x.nrows()
            )));
        }
        Ok(match &self.scaling {
            Some(s) => s[i].apply(x),
            None => x.clone(),
        })
    }
}

/// Closed-form encoder `C X^T (lambda X X^T + (1-lambda) I)^-1`.
pub fn derive_encoder(code: &DMatrix<f64>, x: &ModalityMatrix, lambda: f64) -> Result<DMatrix<f64>> {
    if code.ncols() != x.cols() {
        return Err(LseError::dimension(format!(
            "code has {} columns but modality `{}` has {} instances",
            code.ncols(),
            x.name(),
            x.cols()
        )));
    }
    let system = RidgeSystem::new(x.values(), lambda)?;
    Ok(system.encoder(code, x.values()))
}

/// Kernels and spectrum for one `(dataset, lambda)` pair; any latent
/// dimension up to `N` can be cut from it without redoing the eigensolve.
pub struct PreparedTraining {
    lambda: f64,
    names: Vec<String>,
    kinds: Vec<ModalityKind>,
    features: Vec<DMatrix<f64>>,
    systems: Vec<RidgeSystem>,
    omega: KernelMatrix,
    spectrum: Option<Spectrum>,
    scaling: Option<Vec<FeatureScaling>>,
    options: TrainOptions,
}

impl PreparedTraining {
    pub fn new(dataset: &Dataset, lambda: f64, options: TrainOptions) -> Result<Self> {
        check_training_set(dataset)?;
        let raw: Vec<&DMatrix<f64>> = dataset.modalities().iter().map(|m| m.matrix.values()).collect();
        let scaling = options
            .standardize
            .then(|| raw.iter().map(|x| FeatureScaling::fit(x)).collect::<Vec<_>>());
        let features: Vec<DMatrix<f64>> = match &scaling {
            Some(s) => raw.iter().zip(s).map(|(x, s)| s.apply(x)).collect(),
            None => raw.into_iter().cloned().collect(),
        };

        let systems = options
            .execution
            .try_map_indices(features.len(), |i| RidgeSystem::new(&features[i], lambda))?;
        let deltas = options
            .execution
            .map_indices(features.len(), |i| systems[i].delta(&features[i]));
        let omega = aggregate_kernels(&deltas)?;
        let spectrum = match options.solver {
            EigenSolver::Dense => Some(Spectrum::dense(&omega)?),
            EigenSolver::Subspace { .. } => None,
        };

        Ok(PreparedTraining {
            lambda,
            names: dataset.modalities().iter().map(|m| m.matrix.name().to_string()).collect(),
            kinds: dataset.modalities().iter().map(|m| m.kind).collect(),
            features,
            systems,
            omega,
            spectrum,
            scaling,
            options,
        })
    }

    pub fn num_instances(&self) -> usize {
        self.omega.size()
    }

    pub fn omega(&self) -> &KernelMatrix {
        &self.omega
    }

    pub fn model(&self, latent_dim: usize) -> Result<LseModel> {
        let hyper = Hyperparams::new(self.lambda, latent_dim)?;
        let LatentCodes { code, eigenvalues } = match &self.spectrum {
            Some(s) => s.top(latent_dim)?,
            None => solve_latent_codes_with(&self.omega, latent_dim, self.options.solver)?,
        };
        let top = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
        let degenerate = eigenvalues
            .iter()
            .filter(|&&mu| mu <= RANK_TOLERANCE * top)
            .count();
        if degenerate > 0 {
            log::warn!(
                "latent dimension {latent_dim} exceeds the numerical rank of the kernel; \
                 {degenerate} retained eigenvalue(s) are ~0"
            );
        }
        let encoders = self
            .options
            .execution
            .map_indices(self.features.len(), |i| self.systems[i].encoder(&code, &self.features[i]));
        Ok(LseModel {
            hyper,
            code,
            encoders,
            modality_names: self.names.clone(),
            modality_kinds: self.kinds.clone(),
            eigenvalues,
            scaling: self.scaling.clone(),
        })
    }
}

fn check_training_set(dataset: &Dataset) -> Result<()> {
    let split = dataset.split();
    if let Some((j, c)) = dataset
        .labels()
        .as_slice()
        .iter()
        .enumerate()
        .find(|(_, &c)| !split.is_seen(c))
    {
        return Err(LseError::invalid(format!(
            "training set contains instance {j} of class {c}, which is not a seen class"
        )));
    }
    let present: BTreeSet<_> = dataset.labels().as_slice().iter().collect();
    if present.len() < 2 {
        return Err(LseError::invalid(format!(
            "training needs at least 2 distinct seen classes, found {}",
            present.len()
        )));
    }
    Ok(())
}

pub fn train(dataset: &Dataset, hyper: Hyperparams) -> Result<LseModel> {
    train_with(dataset, hyper, TrainOptions::default())
}

/// Fits the latent codes and encoders on every instance and modality of
/// `dataset`, which must contain seen-class instances only.
pub fn train_with(dataset: &Dataset, hyper: Hyperparams, options: TrainOptions) -> Result<LseModel> {
    if hyper.latent_dim() > dataset.num_instances() {
        return Err(LseError::invalid(format!(
            "latent dimension {} exceeds the {} training instances",
            hyper.latent_dim(),
            dataset.num_instances()
        )));
    }
    PreparedTraining::new(dataset, hyper.lambda(), options)?.model(hyper.latent_dim())
}
