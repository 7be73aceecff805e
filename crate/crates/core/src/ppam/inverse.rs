use nalgebra::{DMatrix, DVector};

use super::PpamModel;
use crate::error::{Error, Result};
use crate::linalg::{self, normalize_log_weights, LN_2PI};

const MAX_CONDITION: f64 = 1e12;

/// A finite Gaussian mixture with full covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl GaussianMixture {
    pub fn mean(&self) -> DVector<f64> {
        let dim = self.means.first().map_or(0, |m| m.len());
        self.weights.iter().zip(&self.means).fold(DVector::zeros(dim), |acc, (w, m)| acc + m * *w)
    }

    /// Mixture covariance (within plus between components).
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let dim = mu.len();
        let mut out = DMatrix::zeros(dim, dim);
        for ((w, m), c) in self.weights.iter().zip(&self.means).zip(&self.covs) {
            let d = m - &mu;
            out += (c + &d * d.transpose()) * *w;
        }
        out
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.weights.len());
        for ((w, m), c) in self.weights.iter().zip(&self.means).zip(&self.covs) {
            if *w <= 0.0 {
                continue;
            }
            let chol = linalg::cholesky(c, "mixture covariance")?;
            terms.push(w.ln() + linalg::log_gaussian(x, m, &chol, linalg::chol_log_det(&chol)));
        }
        Ok(linalg::log_sum_exp(&terms))
    }

    /// Index of the heaviest component, lowest index on ties.
    pub fn dominant(&self) -> usize {
        super::argmax(&self.weights)
    }
}

/// `p(y | x)`: a mixture of Gaussians sharing the diagonal noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardDensity {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub noise_var: DVector<f64>,
}

impl ForwardDensity {
    pub fn mean(&self) -> DVector<f64> {
        self.weights
            .iter()
            .zip(&self.means)
            .fold(DVector::zeros(self.noise_var.len()), |acc, (w, m)| acc + m * *w)
    }

    pub fn log_pdf(&self, y: &DVector<f64>) -> f64 {
        let norm = -0.5 * (y.len() as f64 * LN_2PI + self.noise_var.iter().map(|v| v.ln()).sum::<f64>());
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| {
                let q: f64 = (0..y.len()).map(|i| (y[i] - m[i]).powi(2) / self.noise_var[i]).sum();
                w.ln() + norm - 0.5 * q
            })
            .collect();
        linalg::log_sum_exp(&terms)
    }
}

/// Gating weights `π_k(x)` and the forward conditional at `x`.
pub fn forward_density(model: &PpamModel, x: &DVector<f64>) -> Result<ForwardDensity> {
    if x.len() != model.dim_x() {
        return Err(Error::Shape(format!("x has {} entries, model expects {}", x.len(), model.dim_x())));
    }
    let mut w = model.log_gate(x)?;
    normalize_log_weights(&mut w);
    let means = model.components.iter().map(|c| &c.slope * x + &c.offset).collect();
    Ok(ForwardDensity { weights: w, means, noise_var: model.noise_var.clone() })
}

/// `E[y | x]`.
pub fn forward_map(model: &PpamModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(forward_density(model, x)?.mean())
}

/// One region of the inverted model: `p(y | Z = k) = N(c*, Γ*)` and
/// `p(x | y, Z = k) = N(A* y + b*, Σ*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseComponent {
    /// `c* = A c + b`.
    pub center: DVector<f64>,
    /// `A*`, `L × D`.
    pub slope: DMatrix<f64>,
    /// `b*`.
    pub offset: DVector<f64>,
    /// `Σ* = (Γ⁻¹ + Aᵀ Σ⁻¹ A)⁻¹`, `L × L`.
    pub cov: DMatrix<f64>,
    /// `log |Γ*|`.
    pub log_det_gamma_star: f64,
    forward_slope: DMatrix<f64>,
    gamma: DMatrix<f64>,
    /// `Aᵀ Σ⁻¹`, `L × D`.
    at_sinv: DMatrix<f64>,
}

/// Closed-form parameters of `p(x | y)` for a trained model. The `D × D`
/// matrices `Γ*_k` are only used through the Woodbury identity.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseParams {
    pub components: Vec<InverseComponent>,
    pub noise_var: DVector<f64>,
    pub log_weight: f64,
}

/// Largest eigenvalue of `diag(s) + A Γ Aᵀ` by power iteration on `D`-vectors.
fn top_eigenvalue(noise: &DVector<f64>, a: &DMatrix<f64>, gamma: &DMatrix<f64>) -> f64 {
    let d = noise.len();
    let mut v = DVector::from_fn(d, |i, _| 1.0 + (i % 7) as f64 * 0.1);
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = noise.component_mul(&v) + a * (gamma * (a.transpose() * &v));
        let next = w.dot(&v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lambda).abs() <= 1e-10 * next.abs() {
            return next.max(norm);
        }
        lambda = next;
    }
    lambda
}

/// Inverts every region. Fails if some `Γ*_k` has a condition number
/// above `1e12`.
pub fn invert_params(model: &PpamModel) -> Result<InverseParams> {
    model.validate()?;
    let gates = model.gate_factors()?;
    let inv_var = model.noise_var.map(|v| 1.0 / v);
    let log_det_sigma: f64 = model.noise_var.iter().map(|v| v.ln()).sum();
    let min_var = model.noise_var.min();
    let mut components = Vec::with_capacity(model.n_components());
    for (k, (c, g)) in model.components.iter().zip(&gates).enumerate() {
        let cond = top_eigenvalue(&model.noise_var, &c.slope, &c.gamma) / min_var;
        if !(cond <= MAX_CONDITION) {
            return Err(Error::IllConditioned { component: k, condition: cond });
        }
        let mut at_sinv = c.slope.transpose();
        for (j, mut col) in at_sinv.column_iter_mut().enumerate() {
            col *= inv_var[j];
        }
        let precision = linalg::symmetrize(&(&g.inv + &at_sinv * &c.slope));
        let chol = linalg::cholesky(&precision, "inverse precision")?;
        let cov = linalg::symmetrize(&chol.inverse());
        let log_det_cov = -linalg::chol_log_det(&chol);
        let slope = &cov * &at_sinv;
        let offset = &cov * (&g.inv * &c.center - &at_sinv * &c.offset);
        components.push(InverseComponent {
            center: &c.slope * &c.center + &c.offset,
            slope,
            offset,
            log_det_gamma_star: log_det_sigma + g.log_det - log_det_cov,
            cov,
            forward_slope: c.slope.clone(),
            gamma: c.gamma.clone(),
            at_sinv,
        });
    }
    Ok(InverseParams { components, noise_var: model.noise_var.clone(), log_weight: model.log_weight() })
}

impl InverseParams {
    pub fn dim_x(&self) -> usize {
        self.components.first().map_or(0, |c| c.offset.len())
    }

    pub fn dim_y(&self) -> usize {
        self.noise_var.len()
    }

    /// Dense `Γ*_k = Σ + A_k Γ_k A_kᵀ`.
    pub fn gamma_star(&self, k: usize) -> DMatrix<f64> {
        let c = &self.components[k];
        let mut g = &c.forward_slope * &c.gamma * c.forward_slope.transpose();
        for i in 0..g.nrows() {
            g[(i, i)] += self.noise_var[i];
        }
        g
    }

    /// `log π_k + log N(y; c*_k, Γ*_k)` for every region.
    pub fn log_marginals(&self, y: &DVector<f64>) -> Result<Vec<f64>> {
        if y.len() != self.dim_y() {
            return Err(Error::Shape(format!("y has {} entries, model expects {}", y.len(), self.dim_y())));
        }
        let d = y.len() as f64;
        Ok(self
            .components
            .iter()
            .map(|c| {
                let e = y - &c.center;
                let q0: f64 = e.iter().zip(self.noise_var.iter()).map(|(v, s)| v * v / s).sum();
                let u = &c.at_sinv * &e;
                let q = q0 - (u.transpose() * &c.cov * &u)[0];
                self.log_weight - 0.5 * (d * LN_2PI + c.log_det_gamma_star + q)
            })
            .collect())
    }
}

/// `p(x | y)` as an `L`-dimensional Gaussian mixture.
pub fn inverse_density(params: &InverseParams, y: &DVector<f64>) -> Result<GaussianMixture> {
    let mut w = params.log_marginals(y)?;
    normalize_log_weights(&mut w);
    Ok(GaussianMixture {
        weights: w,
        means: params.components.iter().map(|c| &c.slope * y + &c.offset).collect(),
        covs: params.components.iter().map(|c| c.cov.clone()).collect(),
    })
}

/// `E[x | y]`.
pub fn inverse_map(params: &InverseParams, y: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(inverse_density(params, y)?.mean())
}
