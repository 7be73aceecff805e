//! Small dense linear-algebra and log-domain helpers shared by the models.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `log(sum(exp(v)))`, stable for large magnitudes. Empty input gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Turns log-weights into normalized probabilities in place and returns the
/// log normalizer. All `-inf` input yields a uniform vector.
pub fn normalize_log_weights(weights: &mut [f64]) -> f64 {
    let lse = log_sum_exp(weights);
    if !lse.is_finite() {
        let u = 1.0 / weights.len() as f64;
        weights.iter_mut().for_each(|w| *w = u);
        return lse;
    }
    for w in weights.iter_mut() {
        *w = (*w - lse).exp();
    }
    lse
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::InvalidArgument(format!("{what} is not positive definite")))
}

/// `log |M|` from a Cholesky factor.
pub fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Inverse of an SPD matrix, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let inv = cholesky(m, what)?.inverse();
    Ok(symmetrize(&inv))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `log N(x; mean, cov)` with a pre-factored covariance.
pub fn log_gaussian(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    chol: &Cholesky<f64, Dyn>,
    log_det: f64,
) -> f64 {
    let diff = x - mean;
    let sol = chol.l_dirty().solve_lower_triangular(&diff).unwrap_or(diff);
    let maha = sol.norm_squared();
    -0.5 * (x.len() as f64 * LN_2PI + log_det + maha)
}

/// Determinant of a small symmetric matrix through its eigenvalues, which
/// stays meaningful for near-singular input.
pub fn sym_det(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().iter().product()
}

/// Floors the eigenvalues of a symmetric matrix at `floor`.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let vecs = &eig.eigenvectors;
    symmetrize(&(vecs * DMatrix::from_diagonal(&vals) * vecs.transpose()))
}
