use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::data::ModalityMatrix;
use crate::error::{LseError, Result};

/// Largest accepted condition number of the ridge system before it is
/// reported as singular.
const MAX_CONDITION: f64 = 1e14;

/// Symmetric PSD `N x N` kernel over instances.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix(DMatrix<f64>);

impl KernelMatrix {
    /// Wraps a square matrix. Symmetry is checked; definiteness is not.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() || values.nrows() == 0 {
            return Err(LseError::dimension(format!(
                "kernel must be square and non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        let asym = (&values - values.transpose()).norm();
        if asym > 1e-10 * values.norm().max(f64::MIN_POSITIVE) {
            return Err(LseError::invalid(format!(
                "kernel is not symmetric (asymmetry {asym:.3e})"
            )));
        }
        Ok(KernelMatrix(values))
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.0
    }
}

/// Cholesky factor of `lambda * X X^T + (1 - lambda) I` for one modality.
pub(crate) struct RidgeSystem {
    chol: Cholesky<f64, Dyn>,
}

impl RidgeSystem {
    pub(crate) fn new(x: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(LseError::invalid(format!(
                "lambda must lie in [0, 1), got {lambda}"
            )));
        }
        let f = x.nrows();
        let mut m = x * x.transpose();
        m *= lambda;
        for i in 0..f {
            m[(i, i)] += 1.0 - lambda;
        }
        // cheap estimate from the factor's diagonal; exact when M is diagonal
        let chol = match Cholesky::new(m.clone()) {
            Some(c) => c,
            None => {
                let eig = m.symmetric_eigenvalues();
                let (lo, hi) = eig
                    .iter()
                    .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v.abs()), hi.max(v.abs())));
                return Err(LseError::Singular {
                    condition: hi / lo,
                });
            }
        };
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let condition = (hi / lo).powi(2);
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(LseError::Singular { condition });
        }
        Ok(RidgeSystem { chol })
    }

    /// `X^T M^-1 X`, formed as `Y^T Y` with `Y = L^-1 X` so the result is
    /// exactly symmetric.
    pub(crate) fn delta(&self, x: &DMatrix<f64>) -> KernelMatrix {
        let y = self
            .chol
            .l_dirty()
            .solve_lower_triangular(x)
            .expect("Cholesky factor has a positive diagonal");
        KernelMatrix(y.tr_mul(&y))
    }

    /// `C X^T M^-1`, computed as `(M^-1 X C^T)^T`.
    pub(crate) fn encoder(&self, code: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(&(x * code.transpose())).transpose()
    }
}

/// Ridge-regularized instance kernel `X^T (lambda X X^T + (1-lambda) I)^-1 X`.
pub fn compute_delta(x: &ModalityMatrix, lambda: f64) -> Result<KernelMatrix> {
    let system = RidgeSystem::new(x.values(), lambda)?;
    Ok(system.delta(x.values()))
}

/// Entrywise sum of the kernels, accumulated in list order.
pub fn aggregate_kernels(deltas: &[KernelMatrix]) -> Result<KernelMatrix> {
    let (first, rest) = deltas
        .split_first()
        .ok_or_else(|| LseError::invalid("cannot aggregate an empty kernel list"))?;
    let mut omega = first.0.clone();
    for d in rest {
        if d.size() != omega.nrows() {
            return Err(LseError::dimension(format!(
                "kernel sizes differ: {} vs {}",
                omega.nrows(),
                d.size()
            )));
        }
        omega += &d.0;
    }
    Ok(KernelMatrix(omega))
}
