use nalgebra::{DMatrix, DVector, RealField, SymmetricEigen};
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::EmbeddingVector;

/// Ridge added to every fitted covariance.
pub const COV_RIDGE: f64 = 1e-6;

/// Gaussian summary (mean, covariance) of a set of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FrechetStats<T: Scalar + RealField> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
}

impl<T: Scalar + RealField> FrechetStats<T> {
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::invalid(format!("covariance {}x{} does not match mean of length {d}", cov.nrows(), cov.ncols())));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and (n−1)-normalised covariance plus a `1e-6·I` ridge.
pub fn fit_stats<T: Scalar + RealField>(embeddings: &[EmbeddingVector<T>]) -> Result<FrechetStats<T>> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 embeddings to fit a covariance, got {n}")));
    }
    let d = embeddings[0].dim();
    if embeddings.iter().any(|e| e.dim() != d) {
        return Err(Error::invalid("embeddings differ in dimension"));
    }
    let data = DMatrix::from_fn(n, d, |i, j| embeddings[i].0[j]);
    let nt = <T as Scalar>::c(n as f64);
    let mean: DVector<T> = data.row_sum().transpose() / nt;
    let mut centered = data;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (nt - T::one());
    cov = (&cov + cov.transpose()) * <T as Scalar>::c(0.5);
    for i in 0..d {
        cov[(i, i)] += <T as Scalar>::c(COV_RIDGE);
    }
    FrechetStats::new(mean, cov)
}

fn eigen<T: Scalar + RealField>(m: DMatrix<T>) -> Result<SymmetricEigen<T, nalgebra::Dyn>> {
    let eps = <T as Scalar>::c(if std::mem::size_of::<T>() == 4 { 1e-7 } else { 1e-14 });
    SymmetricEigen::try_new(m, eps, 10_000).ok_or_else(|| Error::Numerical("symmetric eigensolve did not converge".into()))
}

/// Clamps eigenvalues that are negative only through round-off.
fn clamp_eigenvalues<T: Scalar + RealField>(values: &mut DVector<T>) -> Result<()> {
    let scale = values.iter().fold(T::one(), |m, v| Float::max(m, Float::abs(*v)));
    let tol = <T as Scalar>::c(1e-8) * scale;
    for v in values.iter_mut() {
        if *v < T::zero() {
            if -*v > tol {
                return Err(Error::Numerical(format!("matrix has negative eigenvalue {v}")));
            }
            *v = T::zero();
        }
    }
    Ok(())
}

fn sym_sqrt<T: Scalar + RealField>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let mut eig = eigen(m.clone())?;
    clamp_eigenvalues(&mut eig.eigenvalues)?;
    let roots = eig.eigenvalues.map(Float::sqrt);
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// `‖μa−μb‖² + Tr(Σa + Σb − 2(Σa Σb)^{1/2})`.
///
/// The trace of the product square root is taken from the eigenvalues of the
/// symmetric matrix `Σa^{1/2} Σb Σa^{1/2}`, which has the same spectrum as `Σa Σb`.
pub fn frechet_distance<T: Scalar + RealField>(a: &FrechetStats<T>, b: &FrechetStats<T>) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    let diff = &a.mean - &b.mean;
    let mean_term = diff.dot(&diff);
    let root_a = sym_sqrt(&a.cov)?;
    let inner = &root_a * &b.cov * &root_a;
    let inner = (&inner + inner.transpose()) * <T as Scalar>::c(0.5);
    let mut eig = eigen(inner)?;
    clamp_eigenvalues(&mut eig.eigenvalues)?;
    let tr_root = eig.eigenvalues.iter().fold(T::zero(), |acc, v| acc + Float::sqrt(*v));
    let fd = mean_term + a.cov.trace() + b.cov.trace() - <T as Scalar>::c(2.0) * tr_root;
    if !Float::is_finite(fd) {
        return Err(Error::Numerical("Fréchet distance is not finite".into()));
    }
    Ok(Float::max(fd, T::zero()))
}
