//! Fréchet distance between two Gaussian fits of feature sets:
//! ‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2}).
//!
//! The matrix square-root trace is computed through the symmetric form
//! Tr((Σ_a Σ_b)^{1/2}) = Tr((Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}), which keeps the
//! eigendecompositions on symmetric matrices. Covariances get a small ridge
//! (1e-6 on the diagonal) so tiny sample sets stay positive definite.

use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Diagonal shrinkage added to each covariance.
const RIDGE: f64 = 1e-6;

/// Fréchet distance between the Gaussian fits of two feature matrices
/// (rows = samples, columns = feature dimensions). Needs at least two rows
/// per side and a shared dimensionality; rejects non-finite features.
pub fn frechet_distance(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    let (na, d) = a.dim();
    let (nb, db) = b.dim();
    if d != db {
        return Err(Error::shape("feature dimensions", d.to_string(), db.to_string()));
    }
    if na < 2 || nb < 2 {
        return Err(Error::validation(
            "feature rows",
            format!("need at least 2 samples per side, got {na} and {nb}"),
        ));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::validation("features", "non-finite value"));
    }
    let (mu_a, sig_a) = gaussian_fit(a);
    let (mu_b, sig_b) = gaussian_fit(b);
    let mean_term = (&mu_a - &mu_b).norm_squared();
    let cov_term = sig_a.trace() + sig_b.trace() - 2.0 * trace_sqrt_product(&sig_a, &sig_b);
    Ok((mean_term + cov_term).max(0.0))
}

/// Sample mean and ridge-regularized sample covariance (n−1 denominator).
fn gaussian_fit(x: ArrayView2<'_, f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = x.dim();
    let mut mu = DVector::zeros(d);
    for row in x.outer_iter() {
        for (j, &v) in row.iter().enumerate() {
            mu[j] += v;
        }
    }
    mu /= n as f64;
    let mut centered = DMatrix::zeros(n, d);
    for (i, row) in x.outer_iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            centered[(i, j)] = v - mu[j];
        }
    }
    let mut sigma = centered.transpose() * &centered / (n as f64 - 1.0);
    for j in 0..d {
        sigma[(j, j)] += RIDGE;
    }
    (mu, sigma)
}

/// Tr((A B)^{1/2}) for symmetric positive semi-definite A, B.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let root_a = symmetric_sqrt(a);
    let inner = &root_a * b * &root_a;
    // Symmetrize against round-off before the second decomposition.
    let inner = (&inner + inner.transpose()) * 0.5;
    inner
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum()
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    scaled * eig.eigenvectors.transpose()
}
