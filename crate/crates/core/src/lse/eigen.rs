//! Top-`d` eigenvectors of the aggregate kernel.
//!
//! The dense path decomposes the full matrix. The subspace path runs block
//! power iteration with Rayleigh-Ritz extraction and only pays for the
//! leading block, which helps when `d << N`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kernel::KernelMatrix;
use crate::error::{LseError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigenSolver {
    Dense,
    Subspace { tolerance: f64, max_iterations: usize },
}

impl Default for EigenSolver {
    fn default() -> Self {
        EigenSolver::Dense
    }
}

impl EigenSolver {
    pub fn subspace() -> Self {
        EigenSolver::Subspace {
            tolerance: 1e-12,
            max_iterations: 20_000,
        }
    }
}

/// `d x N` code matrix with orthonormal rows and its eigenvalues, descending.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodes {
    pub code: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Full eigendecomposition, sorted descending, reusable across several `d`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    // columns are unit eigenvectors, in the order of `eigenvalues`
    vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn dense(omega: &KernelMatrix) -> Result<Self> {
        let n = omega.size();
        let max_iterations = 1000 * n.max(10);
        let eig = SymmetricEigen::try_new(omega.values().clone(), f64::EPSILON, max_iterations)
            .ok_or(LseError::NoConvergence {
                iterations: max_iterations,
                residual: f64::NAN,
            })?;
        let order = descending_order(eig.eigenvalues.as_slice());
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = eig.eigenvectors.select_columns(&order);
        for mut col in vectors.column_iter_mut() {
            fix_sign(col.as_mut_slice());
        }
        Ok(Spectrum {
            eigenvalues,
            vectors,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn top(&self, d: usize) -> Result<LatentCodes> {
        check_dim(d, self.len())?;
        let code = self.vectors.columns(0, d).transpose();
        Ok(LatentCodes {
            code,
            eigenvalues: self.eigenvalues[..d].to_vec(),
        })
    }
}

fn check_dim(d: usize, n: usize) -> Result<()> {
    if d == 0 || d > n {
        return Err(LseError::invalid(format!(
            "latent dimension {d} must lie in 1..={n} (number of training instances)"
        )));
    }
    Ok(())
}

/// Indices sorting `values` descending; equal values keep index order.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

/// Flips `v` so that its largest-magnitude entry (first one on ties) is positive.
pub(crate) fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Rows of the result are the top-`d` unit eigenvectors of `omega`.
pub fn solve_latent_codes(omega: &KernelMatrix, d: usize) -> Result<LatentCodes> {
    solve_latent_codes_with(omega, d, EigenSolver::Dense)
}

pub fn solve_latent_codes_with(
    omega: &KernelMatrix,
    d: usize,
    solver: EigenSolver,
) -> Result<LatentCodes> {
    check_dim(d, omega.size())?;
    match solver {
        EigenSolver::Dense => Spectrum::dense(omega)?.top(d),
        EigenSolver::Subspace {
            tolerance,
            max_iterations,
        } => subspace_iteration(omega.values(), d, tolerance, max_iterations),
    }
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

fn subspace_iteration(
    omega: &DMatrix<f64>,
    d: usize,
    tolerance: f64,
    max_iterations: usize,
) -> Result<LatentCodes> {
    let n = omega.nrows();
    let block = n.min(d + d.max(8));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let start = DMatrix::from_fn(n, block, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormalize(start);
    let scale = omega.norm().max(f64::MIN_POSITIVE);
    let mut residual = f64::INFINITY;

    for _ in 0..max_iterations {
        let z = omega * &q;
        let mut t = q.tr_mul(&z);
        // symmetrize against rounding before the small dense solve
        t = 0.5 * (&t + t.transpose());
        let ritz = SymmetricEigen::new(t);
        let order = descending_order(ritz.eigenvalues.as_slice());
        let w = ritz.eigenvectors.select_columns(&order);
        let theta: Vec<f64> = order.iter().map(|&i| ritz.eigenvalues[i]).collect();
        let v = &q * &w;
        let ov = &z * &w;

        residual = (0..d)
            .map(|j| (ov.column(j) - v.column(j) * theta[j]).norm())
            .fold(0.0, f64::max)
            / scale;
        if residual <= tolerance || block == n {
            // with a full block the Ritz pairs are exact up to rounding
            let mut code = v.columns(0, d).transpose();
            for mut row in code.row_iter_mut() {
                let mut r: Vec<f64> = row.iter().copied().collect();
                fix_sign(&mut r);
                row.copy_from_slice(&r);
            }
            return Ok(LatentCodes {
                code,
                eigenvalues: theta[..d].to_vec(),
            });
        }
        q = orthonormalize(ov);
    }
    Err(LseError::NoConvergence {
        iterations: max_iterations,
        residual,
    })
}
