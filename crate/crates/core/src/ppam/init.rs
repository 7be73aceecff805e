use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Responsibilities, TrainingSet};
use crate::error::{Error, Result};
use crate::linalg::{self, normalize_log_weights, LN_2PI};

/// Where the initial soft clustering comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitStrategy {
    /// Full-covariance mixture fitted to the directions only.
    GmmX,
    /// Diagonal-covariance mixture fitted to stacked `(x, y)`.
    GmmJoint,
    /// Uniformly random hard labels.
    Random,
}

/// A fitted Gaussian mixture.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// `K × N`.
    pub responsibilities: DMatrix<f64>,
    pub log_likelihood: f64,
}

fn kmeans_pp(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = points.ncols();
    let mut centers = vec![points.column(rng.random_range(0..n)).into_owned()];
    let mut d2: Vec<f64> = (0..n).map(|i| (points.column(i) - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = points.column(pick).into_owned();
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min((points.column(i) - &c).norm_squared());
        }
        centers.push(c);
    }
    centers
}

fn nearest(points: &DMatrix<f64>, centers: &[DVector<f64>]) -> Vec<usize> {
    (0..points.ncols())
        .into_par_iter()
        .map(|i| {
            let p = points.column(i);
            let mut best = (0, f64::INFINITY);
            for (j, c) in centers.iter().enumerate() {
                let d = (p - c).norm_squared();
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect()
}

/// Gaussian mixture by EM, seeded with k-means++ and a few Lloyd passes.
/// `points` is `dim × N`.
pub fn fit_gmm(points: &DMatrix<f64>, k: usize, diagonal: bool, max_iter: usize, seed: u64) -> Result<GmmFit> {
    let (dim, n) = points.shape();
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!("cannot fit {k} clusters to {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp(points, k, &mut rng);
    let mut labels = nearest(points, &centers);
    for _ in 0..10 {
        for (j, c) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == j).collect();
            if !members.is_empty() {
                *c = members.iter().fold(DVector::zeros(dim), |acc, &i| acc + points.column(i)) / members.len() as f64;
            }
        }
        let next = nearest(points, &centers);
        if next == labels {
            break;
        }
        labels = next;
    }

    let mean = points.column_mean();
    let global_var = (0..n).map(|i| (points.column(i) - &mean).norm_squared()).sum::<f64>() / (n * dim) as f64;
    let reg = 1e-6 * global_var.max(f64::MIN_POSITIVE);

    let mut resp = Responsibilities::from_labels(&labels, k).r;
    let mut fit = None;
    let mut prev = f64::NEG_INFINITY;
    for it in 0..max_iter.max(1) {
        // M-step
        let params: Vec<(f64, DVector<f64>, DMatrix<f64>)> = (0..k)
            .into_par_iter()
            .map(|j| {
                let w = resp.row(j);
                let mass: f64 = w.sum();
                if mass <= 1e-10 {
                    return (0.0, mean.clone(), DMatrix::identity(dim, dim) * global_var.max(reg));
                }
                let mu = points * w.transpose() / mass;
                let mut cov = DMatrix::zeros(dim, dim);
                if diagonal {
                    for i in 0..n {
                        if w[i] > 0.0 {
                            for r in 0..dim {
                                let d = points[(r, i)] - mu[r];
                                cov[(r, r)] += w[i] * d * d;
                            }
                        }
                    }
                } else {
                    for i in 0..n {
                        if w[i] > 0.0 {
                            let d = points.column(i) - &mu;
                            cov.ger(w[i], &d, &d, 1.0);
                        }
                    }
                }
                cov /= mass;
                for r in 0..dim {
                    cov[(r, r)] += reg;
                }
                (mass / n as f64, mu, cov)
            })
            .collect();

        // E-step
        let mut factors = Vec::with_capacity(k);
        for (_, _, cov) in &params {
            let chol = linalg::cholesky(cov, "mixture covariance")?;
            let ld = linalg::chol_log_det(&chol);
            factors.push((chol, ld));
        }
        let cols: Vec<(Vec<f64>, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = points.column(i);
                let mut lw: Vec<f64> = params
                    .iter()
                    .zip(&factors)
                    .map(|((w, mu, cov), (chol, ld))| {
                        if *w <= 0.0 {
                            return f64::NEG_INFINITY;
                        }
                        let lg = if diagonal {
                            let mut q = 0.0;
                            for r in 0..dim {
                                let d = x[r] - mu[r];
                                q += d * d / cov[(r, r)];
                            }
                            -0.5 * (dim as f64 * LN_2PI + ld + q)
                        } else {
                            linalg::log_gaussian(&x.into_owned(), mu, chol, *ld)
                        };
                        w.ln() + lg
                    })
                    .collect();
                let lse = normalize_log_weights(&mut lw);
                (lw, lse)
            })
            .collect();
        let ll: f64 = cols.iter().map(|c| c.1).sum();
        if !ll.is_finite() {
            return Err(Error::NonFinite { index: it });
        }
        for (i, (c, _)) in cols.into_iter().enumerate() {
            resp.column_mut(i).copy_from_slice(&c);
        }
        let done = it > 0 && (ll - prev).abs() <= 1e-6 * prev.abs();
        prev = ll;
        fit = Some(GmmFit {
            weights: params.iter().map(|p| p.0).collect(),
            means: params.iter().map(|p| p.1.clone()).collect(),
            covs: params.into_iter().map(|p| p.2).collect(),
            responsibilities: resp.clone(),
            log_likelihood: ll,
        });
        if done {
            debug!("mixture converged after {} iterations", it + 1);
            break;
        }
    }
    fit.ok_or(Error::AllComponentsDegenerate)
}

fn random_labels(n: usize, k: usize, seed: u64) -> Responsibilities {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    Responsibilities::from_labels(&labels, k)
}

/// Initial responsibilities for [`super::train`]. A failing mixture fit
/// falls back to random hard labels.
pub fn init_responsibilities(
    data: &TrainingSet,
    k: usize,
    strategy: InitStrategy,
    seed: u64,
) -> Result<Responsibilities> {
    if k == 0 || data.len() < k {
        return Err(Error::InvalidArgument(format!("{} samples for {k} regions", data.len())));
    }
    let fit = match strategy {
        InitStrategy::Random => return Ok(random_labels(data.len(), k, seed)),
        InitStrategy::GmmX => fit_gmm(&data.x, k, false, 50, seed),
        InitStrategy::GmmJoint => {
            let mut z = DMatrix::zeros(data.dim_x() + data.dim_y(), data.len());
            z.rows_mut(0, data.dim_x()).copy_from(&data.x);
            z.rows_mut(data.dim_x(), data.dim_y()).copy_from(&data.y);
            fit_gmm(&z, k, true, 50, seed)
        }
    };
    match fit {
        Ok(f) => Ok(Responsibilities { r: f.responsibilities }),
        Err(e) => {
            warn!("mixture initialization failed ({e}), using random labels");
            Ok(random_labels(data.len(), k, seed))
        }
    }
}
