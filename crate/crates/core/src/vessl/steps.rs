use nalgebra::{DMatrix, DVector};

use super::{MaskBlocks, MixedModel, Qw, Qxz};
use crate::error::{Error, Result};
use crate::linalg::{self, normalize_log_weights, LN_2PI};
use crate::localize::{check_dims, posterior_from_stats, CueStats};
use crate::spectro::ObservationSet;

pub(crate) fn check_state(mixed: &MixedModel, obs: &ObservationSet) -> Result<()> {
    check_dims(&mixed.base, obs)?;
    if mixed.noise_var.len() != obs.dim() || mixed.lambda.nrows() != obs.dim() || mixed.lambda.ncols() == 0 {
        return Err(Error::Shape("mixed model does not match the observations".into()));
    }
    Ok(())
}

fn check_qw(qw: &Qw, obs: &ObservationSet, m: usize) -> Result<()> {
    if qw.n_dims != obs.dim() || qw.n_frames != obs.n_frames() || qw.n_sources != m {
        return Err(Error::Shape(format!(
            "assignment posterior is {}x{}x{}, expected {}x{}x{m}",
            qw.n_dims,
            qw.n_frames,
            qw.n_sources,
            obs.dim(),
            obs.n_frames()
        )));
    }
    Ok(())
}

/// Source position posteriors given the current cell assignments. Each
/// source sees the observations weighted by its assignment probabilities.
pub fn e_xz_step(mixed: &MixedModel, obs: &ObservationSet, qw: &Qw) -> Result<Qxz> {
    check_state(mixed, obs)?;
    check_qw(qw, obs, mixed.n_sources())?;
    let gates = mixed.base.gate_factors()?;
    let sources = (0..mixed.n_sources())
        .map(|m| {
            let stats = CueStats::weighted(obs, |d, t| qw.get(d, t, m));
            posterior_from_stats(&mixed.base, &gates, &mixed.noise_var, &stats).map(|p| p.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Qxz { sources })
}

/// Per `(d, m)`: `Σ_k α (a·μ + b)` and `Σ_k α ((a·μ + b)² + aᵀ S a)`, so that
/// `Σ_k α E[(y − a·x − b)²] = y² − 2 y P1 + P2`.
pub(crate) struct Moments {
    p1: DMatrix<f64>,
    p2: DMatrix<f64>,
}

impl Moments {
    pub(crate) fn new(mixed: &MixedModel, qxz: &Qxz) -> Self {
        let d = mixed.dim();
        let m = mixed.n_sources();
        let mut p1 = DMatrix::zeros(d, m);
        let mut p2 = DMatrix::zeros(d, m);
        for (s, post) in qxz.sources.iter().enumerate() {
            for (k, c) in mixed.base.components.iter().enumerate() {
                let alpha = post.rho[k];
                if alpha == 0.0 {
                    continue;
                }
                let mu = &post.means[k];
                let sk = &post.covs[k];
                let pred = &c.slope * mu + &c.offset;
                let a_s = &c.slope * sk;
                for i in 0..d {
                    let quad: f64 = (0..c.slope.ncols()).map(|j| a_s[(i, j)] * c.slope[(i, j)]).sum();
                    p1[(i, s)] += alpha * pred[i];
                    p2[(i, s)] += alpha * (pred[i] * pred[i] + quad);
                }
            }
        }
        Self { p1, p2 }
    }

    /// `E_q[log N(y; a·x + b, σ²)]` for source `m` at dimension `d`.
    #[inline]
    pub(crate) fn expected_log_lik(&self, y: f64, d: usize, m: usize, var: f64) -> f64 {
        -0.5 * (LN_2PI + var.ln()) - (y * y - 2.0 * y * self.p1[(d, m)] + self.p2[(d, m)]) / (2.0 * var)
    }

    #[inline]
    pub(crate) fn expected_sq_resid(&self, y: f64, d: usize, m: usize) -> f64 {
        y * y - 2.0 * y * self.p1[(d, m)] + self.p2[(d, m)]
    }
}

/// Cell-to-source posteriors, one independent variable per available cell.
pub fn e_w_step(mixed: &MixedModel, obs: &ObservationSet, qxz: &Qxz) -> Result<Qw> {
    e_w_step_blocked(mixed, obs, qxz, &MaskBlocks::per_dimension(obs.dim()))
}

/// Cell-to-source posteriors with every block of dimensions in a frame
/// sharing one assignment variable.
pub fn e_w_step_blocked(mixed: &MixedModel, obs: &ObservationSet, qxz: &Qxz, blocks: &MaskBlocks) -> Result<Qw> {
    check_state(mixed, obs)?;
    if qxz.sources.len() != mixed.n_sources() || blocks.block_of.len() != obs.dim() {
        return Err(Error::Shape("source or block count mismatch".into()));
    }
    let n_src = mixed.n_sources();
    let mom = Moments::new(mixed, qxz);
    let log_lambda = mixed.lambda.map(|v| v.ln());
    let mut qw = Qw::zeros(obs.dim(), obs.n_frames(), n_src);
    let mut acc = vec![0.0; blocks.n_blocks * n_src];
    let mut seen = vec![false; blocks.n_blocks];
    for (t, frame) in obs.frames.iter().enumerate() {
        acc.iter_mut().for_each(|v| *v = 0.0);
        seen.iter_mut().for_each(|v| *v = false);
        for d in 0..obs.dim() {
            if !frame.avail[d] {
                continue;
            }
            let b = blocks.block_of[d];
            seen[b] = true;
            for m in 0..n_src {
                acc[b * n_src + m] += log_lambda[(d, m)] + mom.expected_log_lik(frame.y[d], d, m, mixed.noise_var[d]);
            }
        }
        for b in 0..blocks.n_blocks {
            if seen[b] {
                let w = &mut acc[b * n_src..(b + 1) * n_src];
                normalize_log_weights(w);
                // a subnormal weight can give a λ that underflows to zero, and then q·ln λ = -inf
                w.iter_mut().filter(|v| !v.is_normal()).for_each(|v| *v = 0.0);
            }
        }
        for d in 0..obs.dim() {
            if frame.avail[d] {
                let b = blocks.block_of[d];
                for m in 0..n_src {
                    qw.set(d, t, m, acc[b * n_src + m]);
                }
            }
        }
    }
    Ok(qw)
}

/// Source weights and noise variances maximizing the free energy, with
/// every weight kept at or above `lambda_floor`. Dimensions never observed
/// keep their previous noise variance and get uniform weights.
pub fn m_step_mixed(
    mixed: &MixedModel,
    obs: &ObservationSet,
    qxz: &Qxz,
    qw: &Qw,
    noise_floor: f64,
    lambda_floor: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_state(mixed, obs)?;
    check_qw(qw, obs, mixed.n_sources())?;
    let n_src = mixed.n_sources();
    if !(0.0..=1.0 / n_src as f64).contains(&lambda_floor) {
        return Err(Error::InvalidArgument(format!("lambda floor {lambda_floor} must lie in [0, 1/{n_src}]")));
    }
    let mom = Moments::new(mixed, qxz);
    let d = obs.dim();
    let mut lambda = DMatrix::zeros(d, n_src);
    let mut num = vec![0.0; d];
    let mut count = vec![0.0; d];
    for (t, frame) in obs.frames.iter().enumerate() {
        for i in 0..d {
            if !frame.avail[i] {
                continue;
            }
            count[i] += 1.0;
            for m in 0..n_src {
                let q = qw.get(i, t, m);
                lambda[(i, m)] += q;
                num[i] += q * mom.expected_sq_resid(frame.y[i], i, m);
            }
        }
    }
    let mut noise = mixed.noise_var.clone();
    for i in 0..d {
        if count[i] > 0.0 {
            let mut row: Vec<f64> = (0..n_src).map(|m| lambda[(i, m)] / count[i]).collect();
            floor_on_simplex(&mut row, lambda_floor);
            for (m, v) in row.into_iter().enumerate() {
                lambda[(i, m)] = v;
            }
            noise[i] = (num[i] / count[i]).max(noise_floor);
        } else {
            lambda.row_mut(i).fill(1.0 / n_src as f64);
        }
    }
    Ok((lambda, noise))
}

/// Maximizer of `Σ_m w_m ln λ_m` over the simplex with `λ_m ≥ floor`, for
/// weights `w` summing to one. Entries under the floor are pinned to it and
/// the rest share the remaining mass in proportion to `w`.
pub fn floor_on_simplex(w: &mut [f64], floor: f64) {
    if floor <= 0.0 {
        return;
    }
    let mut pinned = vec![false; w.len()];
    let orig = w.to_vec();
    loop {
        let n_pinned = pinned.iter().filter(|&&p| p).count();
        let mass = 1.0 - floor * n_pinned as f64;
        let free: f64 = orig.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(v, _)| v).sum();
        let n_free = (w.len() - n_pinned) as f64;
        let mut changed = false;
        for m in 0..w.len() {
            if pinned[m] {
                w[m] = floor;
                continue;
            }
            w[m] = if free > 0.0 { orig[m] * mass / free } else { mass / n_free };
            if w[m] < floor {
                pinned[m] = true;
                changed = true;
            }
        }
        if !changed {
            return;
        }
    }
}

/// `KL(N(μ, S) ‖ N(c, Γ))` with `Γ⁻¹` and `log |Γ|` given.
fn gaussian_kl(mu: &DVector<f64>, s: &DMatrix<f64>, c: &DVector<f64>, gamma_inv: &DMatrix<f64>, log_det_gamma: f64) -> Result<f64> {
    let diff = mu - c;
    let log_det_s = linalg::chol_log_det(&linalg::cholesky(s, "source posterior covariance")?);
    let tr = (gamma_inv * s).trace();
    Ok(0.5 * (tr + diff.dot(&(gamma_inv * &diff)) - mu.len() as f64 + log_det_gamma - log_det_s))
}

/// Variational free energy `E_q[log p(y, W, X, Z)] + H(q)` of the factorized
/// posterior, with the assignment entropy counted once per block.
pub fn free_energy(mixed: &MixedModel, obs: &ObservationSet, qxz: &Qxz, qw: &Qw, blocks: &MaskBlocks) -> Result<f64> {
    check_state(mixed, obs)?;
    check_qw(qw, obs, mixed.n_sources())?;
    if blocks.block_of.len() != obs.dim() {
        return Err(Error::Shape("block map does not match the observations".into()));
    }
    let n_src = mixed.n_sources();
    let mom = Moments::new(mixed, qxz);
    let mut total = 0.0;
    let mut first_in_block = vec![usize::MAX; blocks.n_blocks];
    for (t, frame) in obs.frames.iter().enumerate() {
        first_in_block.iter_mut().for_each(|v| *v = usize::MAX);
        for d in 0..obs.dim() {
            if !frame.avail[d] {
                continue;
            }
            let b = blocks.block_of[d];
            let entropy_here = first_in_block[b] == usize::MAX;
            if entropy_here {
                first_in_block[b] = d;
            }
            for m in 0..n_src {
                let q = qw.get(d, t, m);
                if q <= 0.0 {
                    continue;
                }
                total += q * (mixed.lambda[(d, m)].ln() + mom.expected_log_lik(frame.y[d], d, m, mixed.noise_var[d]));
                if entropy_here {
                    total -= q * q.ln();
                }
            }
        }
    }
    let gates = mixed.base.gate_factors()?;
    let log_pi = mixed.base.log_weight();
    for post in &qxz.sources {
        for (k, (c, g)) in mixed.base.components.iter().zip(&gates).enumerate() {
            let a = post.rho[k];
            if a <= 0.0 {
                continue;
            }
            total += a * (log_pi - a.ln());
            total -= a * gaussian_kl(&post.means[k], &post.covs[k], &c.center, &g.inv, g.log_det)?;
        }
    }
    Ok(total)
}
