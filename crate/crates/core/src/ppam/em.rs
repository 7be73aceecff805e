use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::init::{init_responsibilities, InitStrategy};
use super::{Component, PpamModel, Responsibilities, TrainingSet};
use crate::error::{Error, Result};
use crate::linalg::{self, normalize_log_weights, LN_2PI};

/// How the shared noise variances are re-estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseUpdate {
    /// Residuals pooled over all samples and regions, each weighted by its
    /// responsibility. This is the exact maximizer of the expected
    /// complete-data log-likelihood.
    Pooled,
    /// Unweighted average over regions of each region's mean squared
    /// residual. Equals `Pooled` when all regions carry the same mass.
    ComponentAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MStepOptions {
    /// Regions with less effective mass are dropped. `None` means `L + 1`.
    pub min_mass: Option<f64>,
    /// Lower bound on each noise variance.
    pub noise_floor: f64,
    /// Region covariance eigenvalues are floored at this fraction of `trace / L`.
    pub gamma_floor: f64,
    /// Responsibilities below this value are skipped in the sufficient statistics.
    pub prune_below: f64,
    pub noise_update: NoiseUpdate,
}

impl Default for MStepOptions {
    fn default() -> Self {
        Self {
            min_mass: None,
            noise_floor: 1e-10,
            gamma_floor: 1e-8,
            prune_below: 1e-12,
            noise_update: NoiseUpdate::Pooled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub n_components: usize,
    pub init: InitStrategy,
    pub max_iter: usize,
    /// Stop once the relative log-likelihood improvement falls below this.
    pub tol: f64,
    pub seed: u64,
    pub m_step: MStepOptions,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            n_components: 16,
            init: InitStrategy::GmmX,
            max_iter: 200,
            tol: 1e-6,
            seed: 0,
            m_step: MStepOptions::default(),
        }
    }
}

/// Per-run diagnostics of [`train`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Observed-data log-likelihood of each successive model.
    pub log_likelihood: Vec<f64>,
    /// `|Γ_k|` spread after each M-step.
    pub volume_spread: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub removed_components: usize,
}

/// Squared residual of `y` against `A x + b`, each dimension scaled by `w`.
#[inline]
fn weighted_sq_residual(y: &[f64], slope: &[f64], offset: &[f64], x: &[f64], w: &[f64]) -> f64 {
    let d = y.len();
    match x.len() {
        1 => {
            let (a0, x0) = (&slope[..d], x[0]);
            y.iter()
                .zip(offset)
                .zip(a0)
                .zip(w)
                .map(|(((&yv, &b), &a), &wv)| {
                    let r = yv - b - a * x0;
                    r * r * wv
                })
                .sum()
        }
        2 => {
            let (a0, a1) = (&slope[..d], &slope[d..2 * d]);
            let (x0, x1) = (x[0], x[1]);
            y.iter()
                .zip(offset)
                .zip(a0.iter().zip(a1))
                .zip(w)
                .map(|(((&yv, &b), (&p, &q)), &wv)| {
                    let r = yv - b - p * x0 - q * x1;
                    r * r * wv
                })
                .sum()
        }
        l => (0..d)
            .map(|i| {
                let mut r = y[i] - offset[i];
                for j in 0..l {
                    r -= slope[j * d + i] * x[j];
                }
                r * r * w[i]
            })
            .sum(),
    }
}

/// Log joint `log π_k + log N(x_n; c_k, Γ_k) + log N(y_n; A_k x_n + b_k, Σ)`,
/// `K × N`.
fn log_joint(model: &PpamModel, data: &TrainingSet) -> Result<DMatrix<f64>> {
    model.validate()?;
    if data.dim_x() != model.dim_x() || data.dim_y() != model.dim_y() {
        return Err(Error::Shape(format!(
            "data is {}→{}, model is {}→{}",
            data.dim_x(),
            data.dim_y(),
            model.dim_x(),
            model.dim_y()
        )));
    }
    let gates = model.gate_factors()?;
    let inv_var: Vec<f64> = model.noise_var.iter().map(|v| 1.0 / v).collect();
    let y_norm = -0.5 * (model.dim_y() as f64 * LN_2PI + model.noise_var.iter().map(|v| v.ln()).sum::<f64>());
    let log_w = model.log_weight();
    let k = model.n_components();
    let cols: Vec<Vec<f64>> = (0..data.len())
        .into_par_iter()
        .map(|n| {
            let x = data.x.column(n).into_owned();
            let y = data.y.column(n);
            let y = y.as_slice();
            model
                .components
                .iter()
                .zip(&gates)
                .map(|(c, g)| {
                    let gate = linalg::log_gaussian(&x, &c.center, &g.chol, g.log_det);
                    let q = weighted_sq_residual(
                        y,
                        c.slope.as_slice(),
                        c.offset.as_slice(),
                        x.as_slice(),
                        &inv_var,
                    );
                    log_w + gate + y_norm - 0.5 * q
                })
                .collect()
        })
        .collect();
    let mut out = DMatrix::zeros(k, data.len());
    for (n, col) in cols.iter().enumerate() {
        out.column_mut(n).copy_from_slice(col);
    }
    Ok(out)
}

/// Posterior region memberships and the observed-data log-likelihood.
pub fn e_step(model: &PpamModel, data: &TrainingSet) -> Result<(Responsibilities, f64)> {
    let mut lj = log_joint(model, data)?;
    let mut total = 0.0;
    for n in 0..lj.ncols() {
        let mut col: Vec<f64> = lj.column(n).iter().copied().collect();
        let lse = normalize_log_weights(&mut col);
        if !lse.is_finite() {
            return Err(Error::NonFinite { index: n });
        }
        total += lse;
        lj.column_mut(n).copy_from_slice(&col);
    }
    Ok((Responsibilities { r: lj }, total))
}

/// Observed-data log-likelihood `Σ_n log p(x_n, y_n)`.
pub fn log_likelihood(model: &PpamModel, data: &TrainingSet) -> Result<f64> {
    Ok(e_step(model, data)?.1)
}

struct RegionStats {
    mass: f64,
    center: DVector<f64>,
    scatter: DMatrix<f64>,
    slope: DMatrix<f64>,
    offset: DVector<f64>,
    /// Per-dimension `Σ_n r_kn e_nd²`.
    resid: Vec<f64>,
}

fn region_stats(weights: &[f64], data: &TrainingSet, prune: f64) -> Option<RegionStats> {
    let (l, d) = (data.dim_x(), data.dim_y());
    let active: Vec<usize> = (0..data.len()).filter(|&n| weights[n] > prune).collect();
    let mass: f64 = active.iter().map(|&n| weights[n]).sum();
    if mass <= 0.0 {
        return None;
    }
    let mut center: DVector<f64> = DVector::zeros(l);
    let mut ymean: DVector<f64> = DVector::zeros(d);
    for &n in &active {
        let w = weights[n];
        center.axpy(w, &data.x.column(n), 1.0);
        ymean.axpy(w, &data.y.column(n), 1.0);
    }
    center /= mass;
    ymean /= mass;

    let mut sxx: DMatrix<f64> = DMatrix::zeros(l, l);
    let mut sxy: DMatrix<f64> = DMatrix::zeros(d, l);
    for &n in &active {
        let w = weights[n];
        let dx = data.x.column(n) - &center;
        sxx.ger(w, &dx, &dx, 1.0);
        let yc = data.y.column(n);
        for j in 0..l {
            let wx = w * dx[j];
            let mut col = sxy.column_mut(j);
            for i in 0..d {
                col[i] += wx * (yc[i] - ymean[i]);
            }
        }
    }
    let sxx = linalg::symmetrize(&sxx);
    let pinv = sxx.clone().pseudo_inverse(1e-12 * sxx.trace().abs().max(f64::MIN_POSITIVE)).ok()?;
    let slope: DMatrix<f64> = &sxy * pinv;
    let offset: DVector<f64> = &ymean - &slope * &center;

    let mut resid = vec![0.0; d];
    for &n in &active {
        let w = weights[n];
        let x = data.x.column(n);
        let y = data.y.column(n);
        for i in 0..d {
            let mut r = y[i] - offset[i];
            for j in 0..l {
                r -= slope[(i, j)] * x[j];
            }
            resid[i] += w * r * r;
        }
    }
    Some(RegionStats { mass, center, scatter: sxx / mass, slope, offset, resid })
}

/// Closed-form parameter update under equal region volumes and weights.
/// Regions whose mass falls below the threshold, or whose scatter is
/// singular, are removed.
pub fn m_step(r: &Responsibilities, data: &TrainingSet, opts: &MStepOptions) -> Result<PpamModel> {
    if r.len() != data.len() {
        return Err(Error::Shape(format!(
            "{} responsibility columns for {} samples",
            r.len(),
            data.len()
        )));
    }
    let l = data.dim_x();
    let min_mass = opts.min_mass.unwrap_or((l + 1) as f64);
    let rows: Vec<Vec<f64>> = (0..r.n_components()).map(|k| r.r.row(k).iter().copied().collect()).collect();
    let stats: Vec<Option<RegionStats>> = rows
        .par_iter()
        .map(|w| {
            let mass: f64 = w.iter().sum();
            if mass < min_mass {
                return None;
            }
            region_stats(w, data, opts.prune_below)
        })
        .collect();

    let mut kept = Vec::new();
    for (k, s) in stats.into_iter().enumerate() {
        let Some(s) = s else {
            debug!("region {k}: mass below {min_mass}, removed");
            continue;
        };
        let eig = s.scatter.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(hi > 0.0) || !lo.is_finite() || lo <= 1e-12 * hi {
            debug!("region {k}: singular scatter, removed");
            continue;
        }
        kept.push(s);
    }
    let removed = r.n_components() - kept.len();
    if removed > 0 {
        warn!("removed {removed} degenerate region(s), {} left", kept.len());
    }
    if kept.is_empty() {
        return Err(Error::AllComponentsDegenerate);
    }

    // equal-volume region covariances
    let total_mass: f64 = kept.iter().map(|s| s.mass).sum();
    let floored: Vec<DMatrix<f64>> = kept
        .iter()
        .map(|s| linalg::floor_eigenvalues(&s.scatter, opts.gamma_floor * s.scatter.trace() / l as f64))
        .collect();
    let roots: Vec<f64> = floored.iter().map(|m| linalg::sym_det(m).powf(1.0 / l as f64)).collect();
    let common: f64 = kept.iter().zip(&roots).map(|(s, &q)| s.mass / total_mass * q).sum();

    let d = data.dim_y();
    let mut noise = DVector::zeros(d);
    match opts.noise_update {
        NoiseUpdate::Pooled => {
            for s in &kept {
                for i in 0..d {
                    noise[i] += s.resid[i];
                }
            }
            noise /= total_mass;
        }
        NoiseUpdate::ComponentAverage => {
            for s in &kept {
                for i in 0..d {
                    noise[i] += s.resid[i] / s.mass;
                }
            }
            noise /= kept.len() as f64;
        }
    }
    noise.iter_mut().for_each(|v| *v = v.max(opts.noise_floor));

    let components = kept
        .into_iter()
        .zip(floored)
        .zip(roots)
        .map(|((s, sm), q)| Component {
            gamma: linalg::symmetrize(&(sm * (common / q))),
            center: s.center,
            slope: s.slope,
            offset: s.offset,
        })
        .collect();
    Ok(PpamModel { components, noise_var: noise })
}

/// EM from an initial clustering until the relative log-likelihood gain
/// drops below `tol` or `max_iter` E-steps have run.
pub fn train(data: &TrainingSet, opts: &TrainOptions) -> Result<(PpamModel, TrainReport)> {
    let l = data.dim_x();
    if opts.n_components == 0 {
        return Err(Error::InvalidArgument("need at least one region".into()));
    }
    if data.len() < l + 1 {
        return Err(Error::InvalidArgument(format!("{} samples is too few", data.len())));
    }
    let r0 = init_responsibilities(data, opts.n_components, opts.init, opts.seed)?;
    let mut report = TrainReport::default();
    let mut model = m_step(&r0, data, &opts.m_step)?;
    report.volume_spread.push(model.volume_spread());
    report.removed_components += opts.n_components - model.n_components();

    let mut prev = f64::NEG_INFINITY;
    for it in 0..opts.max_iter.max(1) {
        let (r, ll) = e_step(&model, data)?;
        report.log_likelihood.push(ll);
        report.iterations = it + 1;
        debug!("EM iteration {it}: log-likelihood {ll:.6}, K = {}", model.n_components());
        if it > 0 && (ll - prev).abs() <= opts.tol * prev.abs() {
            report.converged = true;
            break;
        }
        if it + 1 == opts.max_iter.max(1) {
            break;
        }
        prev = ll;
        let k_before = model.n_components();
        model = m_step(&r, data, &opts.m_step)?;
        report.volume_spread.push(model.volume_spread());
        report.removed_components += k_before - model.n_components();
    }
    Ok((model, report))
}
