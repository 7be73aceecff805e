//! Multi-source localization and separation by variational EM.
//!
//! Every available spectrogram cell is emitted by one of `M` sources whose
//! directions are unknown. The posterior is factorized into source
//! directions ([`Qxz`]) and cell assignments ([`Qw`]); the two factors and
//! the per-dimension source weights and noise variances are updated in turn.
//! Runs start on the coarsest model of a ladder, and assignments are kept
//! frame-wide at first and split into finer frequency blocks as iterations
//! proceed.

mod steps;

pub use steps::{e_w_step, e_w_step_blocked, e_xz_step, free_energy, m_step_mixed};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localize::PosteriorGmm;
use crate::ppam::PpamModel;
use crate::spectro::{istft, AudioBuffer, ComplexSpectrogram, CueKind, DimMap, ObservationSet};

/// A frozen map with per-dimension noise and source weights `λ` (`D × M`).
#[derive(Debug, Clone, PartialEq)]
pub struct MixedModel {
    pub base: PpamModel,
    pub noise_var: DVector<f64>,
    pub lambda: DMatrix<f64>,
}

impl MixedModel {
    /// Uniform source weights and the map's own noise.
    pub fn new(base: PpamModel, n_sources: usize) -> Self {
        let d = base.dim_y();
        let noise_var = base.noise_var.clone();
        Self { base, noise_var, lambda: DMatrix::from_element(d, n_sources.max(1), 1.0 / n_sources.max(1) as f64) }
    }

    pub fn n_sources(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn dim(&self) -> usize {
        self.lambda.nrows()
    }
}

/// Direction posterior of each source.
#[derive(Debug, Clone, PartialEq)]
pub struct Qxz {
    pub sources: Vec<PosteriorGmm>,
}

/// Assignment probabilities `q[(t·D + d)·M + m]`; all zero on unavailable cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Qw {
    pub n_dims: usize,
    pub n_frames: usize,
    pub n_sources: usize,
    pub q: Vec<f64>,
}

impl Qw {
    pub fn zeros(n_dims: usize, n_frames: usize, n_sources: usize) -> Self {
        Self { n_dims, n_frames, n_sources, q: vec![0.0; n_dims * n_frames * n_sources] }
    }

    #[inline]
    fn index(&self, d: usize, t: usize, m: usize) -> usize {
        (t * self.n_dims + d) * self.n_sources + m
    }

    #[inline]
    pub fn get(&self, d: usize, t: usize, m: usize) -> f64 {
        self.q[self.index(d, t, m)]
    }

    #[inline]
    pub fn set(&mut self, d: usize, t: usize, m: usize, v: f64) {
        let i = self.index(d, t, m);
        self.q[i] = v;
    }

    /// Available cells follow `χ`: every source probability is one.
    pub fn single_source(obs: &ObservationSet) -> Self {
        let mut qw = Self::zeros(obs.dim(), obs.n_frames(), 1);
        for (t, f) in obs.frames.iter().enumerate() {
            for d in 0..obs.dim() {
                if f.avail[d] {
                    qw.set(d, t, 0, 1.0);
                }
            }
        }
        qw
    }

    /// Seeded start: one symmetric Dirichlet draw per frame, shared by the
    /// frame's available cells.
    pub fn random_frames(obs: &ObservationSet, n_sources: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut qw = Self::zeros(obs.dim(), obs.n_frames(), n_sources);
        let mut p = vec![0.0; n_sources];
        for (t, f) in obs.frames.iter().enumerate() {
            for v in p.iter_mut() {
                *v = Exp1.sample(&mut rng);
            }
            let s: f64 = p.iter().sum();
            for d in 0..obs.dim() {
                if f.avail[d] {
                    for (m, v) in p.iter().enumerate() {
                        qw.set(d, t, m, v / s);
                    }
                }
            }
        }
        qw
    }

    /// The same posterior with sources reordered: source `m` of the result
    /// is source `perm[m]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.n_dims, self.n_frames, self.n_sources);
        for t in 0..self.n_frames {
            for d in 0..self.n_dims {
                for (m, &p) in perm.iter().enumerate() {
                    out.set(d, t, m, self.get(d, t, p));
                }
            }
        }
        out
    }
}

/// Groups of cue dimensions that share one assignment within a frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskBlocks {
    pub n_blocks: usize,
    pub block_of: Vec<usize>,
}

impl MaskBlocks {
    /// Every dimension on its own.
    pub fn per_dimension(d: usize) -> Self {
        Self { n_blocks: d, block_of: (0..d).collect() }
    }

    /// Every dimension of a frame together.
    pub fn whole_frame(d: usize) -> Self {
        Self { n_blocks: 1, block_of: vec![0; d] }
    }
}

fn bin_span(dims: &DimMap) -> (usize, usize) {
    let lo = dims.entries().iter().map(|e| e.1).min().unwrap_or(1);
    let hi = dims.entries().iter().map(|e| e.1).max().unwrap_or(1);
    (lo, hi - lo + 1)
}

/// Number of frequency bins spanned by the cue dimensions: the block count
/// at which the schedule stops splitting.
pub fn schedule_resolution(dims: &DimMap) -> usize {
    bin_span(dims).1
}

/// Block structure at `iteration` (from 1): the frequency span is cut into
/// `min(2^(iteration-1), F)` equal blocks and every cue dimension joins the
/// block of its frequency bin. Cues of one bin always share a block.
pub fn progressive_mask_schedule(iteration: usize, dims: &DimMap) -> Result<MaskBlocks> {
    if iteration == 0 {
        return Err(Error::InvalidArgument("mask schedule iterations start at 1".into()));
    }
    let (lo, span) = bin_span(dims);
    let n_blocks = if iteration > 64 { span } else { (1usize << (iteration - 1).min(62)).min(span) };
    let block_of = dims.entries().iter().map(|&(_, bin)| (bin - lo) * n_blocks / span).collect();
    Ok(MaskBlocks { n_blocks, block_of })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VesslOptions {
    pub n_sources: usize,
    /// Iteration cap per scale.
    pub max_iter: usize,
    /// Relative free-energy change below which a scale stops.
    pub tol: f64,
    pub seed: u64,
    /// Frame-wide assignments first, split by the block schedule.
    pub progressive: bool,
    /// Start the block schedule over at every scale instead of only at the first.
    pub restart_schedule: bool,
    /// Update `Σ` in the M-step; with one source and this off, a run
    /// reproduces single-source localization.
    pub reestimate_noise: bool,
    pub noise_floor: f64,
    /// Lower bound on every source weight `λ_dm`. A weight at zero can never
    /// win a cell back, so hard early assignments would otherwise stick.
    pub lambda_floor: f64,
}

impl Default for VesslOptions {
    fn default() -> Self {
        Self {
            n_sources: 2,
            max_iter: 50,
            tol: 1e-5,
            seed: 0,
            progressive: true,
            restart_schedule: false,
            reestimate_noise: true,
            noise_floor: 1e-10,
            lambda_floor: 1e-3,
        }
    }
}

/// Free energy after every iteration of one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTrace {
    pub n_components: usize,
    pub free_energy: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VesslState {
    pub mixed: MixedModel,
    pub qxz: Qxz,
    pub qw: Qw,
    pub traces: Vec<ScaleTrace>,
}

fn check_ladder(ladder: &[PpamModel]) -> Result<()> {
    let first = ladder.first().ok_or_else(|| Error::InvalidArgument("empty model ladder".into()))?;
    for m in ladder {
        m.validate()?;
        if m.dim_x() != first.dim_x() || m.dim_y() != first.dim_y() {
            return Err(Error::Shape("models of the ladder differ in dimensions".into()));
        }
    }
    Ok(())
}

/// Runs the ladder from coarse to fine starting from seeded frame-wise
/// assignments. Returns the state reached on the last model.
pub fn run(ladder: &[PpamModel], obs: &ObservationSet, opts: &VesslOptions) -> Result<VesslState> {
    if opts.n_sources == 0 {
        return Err(Error::InvalidArgument("at least one source is required".into()));
    }
    let init = if opts.n_sources == 1 { Qw::single_source(obs) } else { Qw::random_frames(obs, opts.n_sources, opts.seed) };
    run_from(ladder, obs, opts, init)
}

/// [`run`] from a given initial assignment posterior.
pub fn run_from(ladder: &[PpamModel], obs: &ObservationSet, opts: &VesslOptions, init: Qw) -> Result<VesslState> {
    check_ladder(ladder)?;
    if init.n_sources != opts.n_sources || opts.n_sources == 0 {
        return Err(Error::Shape("initial assignments do not match the source count".into()));
    }
    if !(opts.tol >= 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidArgument("need max_iter > 0 and tol >= 0".into()));
    }
    let full = schedule_resolution(&obs.dims);
    let mut mixed = MixedModel::new(ladder[0].clone(), opts.n_sources);
    steps::check_state(&mixed, obs)?;
    let mut qw = init;
    let mut qxz = None;
    let mut traces = Vec::with_capacity(ladder.len());
    let mut iteration = 0;
    for base in ladder {
        mixed.base = base.clone();
        if opts.restart_schedule {
            iteration = 0;
        }
        let mut trace = ScaleTrace { n_components: base.n_components(), free_energy: Vec::new(), converged: false };
        for _ in 0..opts.max_iter {
            iteration += 1;
            let blocks = if opts.progressive {
                progressive_mask_schedule(iteration, &obs.dims)?
            } else {
                MaskBlocks::per_dimension(obs.dim())
            };
            let post = e_xz_step(&mixed, obs, &qw)?;
            qw = e_w_step_blocked(&mixed, obs, &post, &blocks)?;
            let (lambda, noise) = m_step_mixed(&mixed, obs, &post, &qw, opts.noise_floor, opts.lambda_floor)?;
            mixed.lambda = lambda;
            if opts.reestimate_noise {
                mixed.noise_var = noise;
            }
            let f = free_energy(&mixed, obs, &post, &qw, &blocks)?;
            qxz = Some(post);
            let prev = trace.free_energy.last().copied();
            trace.free_energy.push(f);
            if let Some(p) = prev {
                if blocks.n_blocks >= full.min(obs.dim()) || !opts.progressive {
                    if (f - p).abs() <= opts.tol * p.abs().max(f64::MIN_POSITIVE) {
                        trace.converged = true;
                        break;
                    }
                }
            }
        }
        log::debug!("scale K={}: {} iterations", base.n_components(), trace.free_energy.len());
        traces.push(trace);
    }
    let qxz = qxz.expect("at least one iteration ran");
    Ok(VesslState { mixed, qxz, qw, traces })
}

/// MAP direction of one source and the component it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceEstimate {
    pub direction: DVector<f64>,
    pub component: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapEstimate {
    pub sources: Vec<SourceEstimate>,
    /// Most probable source of each cell, `(t·D + d)`; `None` where unavailable.
    pub assignment: Vec<Option<usize>>,
    pub n_dims: usize,
    pub n_frames: usize,
}

/// Per source the mean of the component maximizing `α / √|S|`, and per cell
/// the most probable source. Ties go to the lowest index.
pub fn map_estimates(qxz: &Qxz, qw: &Qw) -> Result<MapEstimate> {
    if qxz.sources.len() != qw.n_sources {
        return Err(Error::Shape("posterior factors disagree on the source count".into()));
    }
    let sources = qxz
        .sources
        .iter()
        .map(|post| {
            let score: Vec<f64> = post
                .rho
                .iter()
                .zip(&post.covs)
                .map(|(&a, s)| if a > 0.0 { a.ln() - 0.5 * crate::linalg::sym_det(s).ln() } else { f64::NEG_INFINITY })
                .collect();
            let k = crate::ppam::argmax(&score);
            SourceEstimate { direction: post.means[k].clone(), component: k }
        })
        .collect();
    let mut assignment = vec![None; qw.n_dims * qw.n_frames];
    for t in 0..qw.n_frames {
        for d in 0..qw.n_dims {
            let row: Vec<f64> = (0..qw.n_sources).map(|m| qw.get(d, t, m)).collect();
            if row.iter().any(|&v| v > 0.0) {
                assignment[t * qw.n_dims + d] = Some(crate::ppam::argmax(&row));
            }
        }
    }
    Ok(MapEstimate { sources, assignment, n_dims: qw.n_dims, n_frames: qw.n_frames })
}

impl MapEstimate {
    /// Binary mask of `source` in spectrogram layout (`t · n_bins + f`). A
    /// bin follows its ILD dimension; bins without one are masked out.
    pub fn spectrogram_mask(&self, dims: &DimMap, n_bins: usize, source: usize) -> Result<Vec<f64>> {
        if dims.len() != self.n_dims {
            return Err(Error::Shape("dimension map does not match the assignments".into()));
        }
        let mut mask = vec![0.0; n_bins * self.n_frames];
        for (d, &(kind, bin)) in dims.entries().iter().enumerate() {
            if kind != CueKind::Ild || bin == 0 || bin > n_bins {
                continue;
            }
            for t in 0..self.n_frames {
                if self.assignment[t * self.n_dims + d] == Some(source) {
                    mask[t * n_bins + bin - 1] = 1.0;
                }
            }
        }
        Ok(mask)
    }
}

/// Applies each source's binary mask to both channels and resynthesizes
/// `length` samples.
pub fn separate(
    left: &ComplexSpectrogram,
    right: &ComplexSpectrogram,
    map: &MapEstimate,
    dims: &DimMap,
    length: usize,
) -> Result<Vec<AudioBuffer>> {
    if !left.same_shape(right) || left.n_frames != map.n_frames {
        return Err(Error::Shape(format!(
            "spectrogram has {} frames, assignments have {}",
            left.n_frames, map.n_frames
        )));
    }
    (0..map.sources.len())
        .map(|m| {
            let mask = map.spectrogram_mask(dims, left.n_bins, m)?;
            istft(&left.masked(&mask)?, &right.masked(&mask)?, length)
        })
        .collect()
}
