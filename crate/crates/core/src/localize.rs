//! Single-source localization from a sparse ILPD spectrogram.
//!
//! All available observations are attributed to one source, which makes the
//! posterior over its direction a `K`-component Gaussian mixture in closed
//! form. Only per-dimension sums over frames enter the computation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, normalize_log_weights, LN_2PI};
use crate::ppam::{GateFactor, PpamModel};
use crate::spectro::ObservationSet;

/// Posterior `Σ_k ρ_k N(x; m_k, V_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGmm {
    pub rho: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl PosteriorGmm {
    pub fn mean(&self) -> DVector<f64> {
        let l = self.means.first().map_or(0, |m| m.len());
        self.rho.iter().zip(&self.means).fold(DVector::zeros(l), |acc, (r, m)| acc + m * *r)
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.rho.len());
        for ((r, m), v) in self.rho.iter().zip(&self.means).zip(&self.covs) {
            if *r > 0.0 {
                let chol = linalg::cholesky(v, "posterior covariance")?;
                terms.push(r.ln() + linalg::log_gaussian(x, m, &chol, linalg::chol_log_det(&chol)));
            }
        }
        Ok(linalg::log_sum_exp(&terms))
    }

    /// Density on the outer product of two axes, `values[i * cols.len() + j]`
    /// at `(rows[i], cols[j])`.
    pub fn density_grid(&self, rows: &[f64], cols: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for &a in rows {
            for &b in cols {
                out.push(self.log_pdf(&DVector::from_vec(vec![a, b]))?.exp());
            }
        }
        Ok(out)
    }
}

/// Per-dimension weighted sums over frames: `Σ_t w_dt`, `Σ_t w_dt y_dt`,
/// `Σ_t w_dt y_dt²`.
#[derive(Debug, Clone, PartialEq)]
pub struct CueStats {
    pub count: Vec<f64>,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl CueStats {
    /// Unit weight on every available cell.
    pub fn from_observations(obs: &ObservationSet) -> Self {
        Self::weighted(obs, |_, _| 1.0)
    }

    /// Weight `w(d, t)` on every available cell.
    pub fn weighted(obs: &ObservationSet, w: impl Fn(usize, usize) -> f64) -> Self {
        let d = obs.dim();
        let mut s = Self { count: vec![0.0; d], sum: vec![0.0; d], sum_sq: vec![0.0; d] };
        for (t, frame) in obs.frames.iter().enumerate() {
            for i in 0..d {
                if frame.avail[i] {
                    let wt = w(i, t);
                    let y = frame.y[i];
                    s.count[i] += wt;
                    s.sum[i] += wt * y;
                    s.sum_sq[i] += wt * y * y;
                }
            }
        }
        s
    }
}

/// One posterior component with its unnormalized log weight
/// `log π_k + log ∫ N(x; c_k, Γ_k) Π N(y; a x + b, σ²)^w dx`.
pub(crate) struct PosteriorComponent {
    pub log_weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub(crate) fn posterior_component(
    model: &PpamModel,
    k: usize,
    gate: &GateFactor,
    noise_var: &DVector<f64>,
    stats: &CueStats,
) -> Result<PosteriorComponent> {
    let c = &model.components[k];
    let l = c.center.len();
    let gi_c = &gate.inv * &c.center;
    let mut precision = gate.inv.clone();
    let mut h = gi_c.clone();
    let mut resid = 0.0;
    let mut norm = 0.0;
    for d in 0..noise_var.len() {
        let n = stats.count[d];
        if n == 0.0 {
            continue;
        }
        let iv = 1.0 / noise_var[d];
        let b = c.offset[d];
        for j in 0..l {
            let aj = c.slope[(d, j)];
            h[j] += iv * (stats.sum[d] - n * b) * aj;
            for i in 0..l {
                precision[(i, j)] += iv * n * c.slope[(d, i)] * aj;
            }
        }
        resid += iv * (stats.sum_sq[d] - 2.0 * b * stats.sum[d] + n * b * b);
        norm += n * (LN_2PI + noise_var[d].ln());
    }
    let chol = linalg::cholesky(&linalg::symmetrize(&precision), "posterior precision")?;
    let mean = chol.solve(&h);
    let cov = linalg::symmetrize(&chol.inverse());
    let log_det_cov = -linalg::chol_log_det(&chol);
    let log_weight = model.log_weight()
        - 0.5 * norm
        - 0.5 * (gate.log_det - log_det_cov)
        - 0.5 * (c.center.dot(&gi_c) + resid - h.dot(&mean));
    Ok(PosteriorComponent { log_weight, mean, cov })
}

pub(crate) fn check_dims(model: &PpamModel, obs: &ObservationSet) -> Result<()> {
    model.validate()?;
    if obs.dim() != model.dim_y() {
        return Err(Error::Shape(format!(
            "observations have {} dimensions, model has {}",
            obs.dim(),
            model.dim_y()
        )));
    }
    Ok(())
}

/// Posterior from precomputed statistics with the given noise variances.
/// Also returns the unnormalized log weights.
pub(crate) fn posterior_from_stats(
    model: &PpamModel,
    gates: &[GateFactor],
    noise_var: &DVector<f64>,
    stats: &CueStats,
) -> Result<(PosteriorGmm, Vec<f64>)> {
    let comps = (0..model.n_components())
        .map(|k| posterior_component(model, k, &gates[k], noise_var, stats))
        .collect::<Result<Vec<_>>>()?;
    let log_w: Vec<f64> = comps.iter().map(|c| c.log_weight).collect();
    let mut rho = log_w.clone();
    normalize_log_weights(&mut rho);
    let (means, covs) = comps.into_iter().map(|c| (c.mean, c.cov)).unzip();
    Ok((PosteriorGmm { rho, means, covs }, log_w))
}

/// Direction posterior when every available cell is emitted by one source.
pub fn sparse_posterior(model: &PpamModel, obs: &ObservationSet) -> Result<PosteriorGmm> {
    check_dims(model, obs)?;
    let gates = model.gate_factors()?;
    let stats = CueStats::from_observations(obs);
    Ok(posterior_from_stats(model, &gates, &model.noise_var, &stats)?.0)
}

/// Posterior mean direction together with the full posterior.
pub fn localize_point(model: &PpamModel, obs: &ObservationSet) -> Result<(DVector<f64>, PosteriorGmm)> {
    let post = sparse_posterior(model, obs)?;
    Ok((post.mean(), post))
}
