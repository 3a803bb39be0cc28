//! Fréchet distance between Gaussian fits of two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, TensorBuf};

/// Added to the covariance diagonal when a set has fewer than `d + 1` rows.
pub const SHRINKAGE: f64 = 1e-6;
/// Eigenvalues below this are treated as zero in the matrix square root.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Mean and unbiased covariance of the rows of `x` (`[n, d]`, any trailing shape flattened).
pub fn gaussian_fit<F: Scalar>(x: &TensorBuf<F>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x.batch();
    if n < 2 {
        return Err(Error::Analysis(format!("need at least 2 samples for a covariance, got {n}")));
    }
    let d = x.item_len();
    let m = DMatrix::from_fn(n, d, |i, j| x.item(i)[j].as_f64());
    let mean = DVector::from_fn(d, |j, _| m.column(j).sum() / n as f64);
    let mut centered = m;
    for j in 0..d {
        let mu = mean[j];
        centered.column_mut(j).apply(|v| *v -= mu);
    }
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    if n < d + 1 {
        for j in 0..d {
            cov[(j, j)] += SHRINKAGE;
        }
    }
    Ok((mean, cov))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Principal square root of a symmetric positive semi-definite matrix.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = eig.eigenvalues.map(|l| if l < EIGEN_FLOOR { 0.0 } else { l.sqrt() });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2·(Σa^½ Σb Σa^½)^½)`
pub fn frechet_from_stats(mu_a: &DVector<f64>, cov_a: &DMatrix<f64>, mu_b: &DVector<f64>, cov_b: &DMatrix<f64>) -> f64 {
    let s = sqrt_psd(cov_a);
    let inner = symmetrize(&(&s * cov_b * &s));
    let eig = SymmetricEigen::new(inner);
    // Shrunk covariances give inner eigenvalues near SHRINKAGE², well under
    // the floor, so only round-off negatives are dropped here.
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let diff = mu_a - mu_b;
    let fd = diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    fd.max(0.0)
}

pub fn frechet_distance<F: Scalar>(a: &TensorBuf<F>, b: &TensorBuf<F>) -> Result<f64> {
    if a.item_len() != b.item_len() {
        return Err(Error::shape(&[a.item_len()], &[b.item_len()]));
    }
    let (ma, ca) = gaussian_fit(a)?;
    let (mb, cb) = gaussian_fit(b)?;
    Ok(frechet_from_stats(&ma, &ca, &mb, &cb))
}
