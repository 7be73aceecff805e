//! Probabilistic piecewise-affine mapping (PPAM).
//!
//! A low-dimensional direction `x ∈ R^L` is assigned to one of `K` regions
//! through a Gaussian gate `N(x; c_k, Γ_k)` with equal weights and equal
//! `|Γ_k|`, and mapped to cues by the region's affine transform:
//! `y = A_k x + b_k + e`, `e ~ N(0, Σ)` with diagonal `Σ` shared by all
//! regions. Training is closed-form EM ([`train`]); the fitted model yields
//! Gaussian-mixture forward and inverse conditionals ([`forward_density`],
//! [`inverse_density`]).

mod em;
mod init;
mod inverse;

pub use em::{e_step, log_likelihood, m_step, train, MStepOptions, NoiseUpdate, TrainOptions, TrainReport};
pub use init::{fit_gmm, init_responsibilities, GmmFit, InitStrategy};
pub use inverse::{
    forward_density, forward_map, invert_params, inverse_density, inverse_map, ForwardDensity,
    GaussianMixture, InverseComponent, InverseParams,
};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, chol_log_det, cholesky};

/// One region of the map: gate `N(c, Γ)` and affine transform `A x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub center: DVector<f64>,
    pub gamma: DMatrix<f64>,
    /// `D × L`.
    pub slope: DMatrix<f64>,
    pub offset: DVector<f64>,
}

/// A trained map. Mixture weights are implicitly `1/K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PpamModel {
    pub components: Vec<Component>,
    /// Diagonal of `Σ`.
    pub noise_var: DVector<f64>,
}

impl PpamModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim_x(&self) -> usize {
        self.components.first().map_or(0, |c| c.center.len())
    }

    pub fn dim_y(&self) -> usize {
        self.noise_var.len()
    }

    pub fn log_weight(&self) -> f64 {
        -(self.n_components() as f64).ln()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidArgument("model has no components".into()));
        }
        let (l, d) = (self.dim_x(), self.dim_y());
        for (k, c) in self.components.iter().enumerate() {
            if c.center.len() != l
                || c.gamma.shape() != (l, l)
                || c.slope.shape() != (d, l)
                || c.offset.len() != d
            {
                return Err(Error::Shape(format!("component {k} has inconsistent dimensions")));
            }
        }
        if self.noise_var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("noise variances must be positive".into()));
        }
        Ok(())
    }

    /// `(max - min) / mean` of the region determinants `|Γ_k|`.
    pub fn volume_spread(&self) -> f64 {
        let dets: Vec<f64> = self.components.iter().map(|c| linalg::sym_det(&c.gamma)).collect();
        let max = dets.iter().copied().fold(f64::MIN, f64::max);
        let min = dets.iter().copied().fold(f64::MAX, f64::min);
        let mean = dets.iter().sum::<f64>() / dets.len() as f64;
        (max - min) / mean.abs()
    }

    pub(crate) fn gate_factors(&self) -> Result<Vec<GateFactor>> {
        self.components
            .iter()
            .map(|c| {
                let chol = cholesky(&c.gamma, "region covariance")?;
                let log_det = chol_log_det(&chol);
                let inv = linalg::symmetrize(&chol.inverse());
                Ok(GateFactor { chol, log_det, inv })
            })
            .collect()
    }

    /// `log π_k + log N(x; c_k, Γ_k)` for every region.
    pub fn log_gate(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        let factors = self.gate_factors()?;
        Ok(self
            .components
            .iter()
            .zip(&factors)
            .map(|(c, g)| self.log_weight() + linalg::log_gaussian(x, &c.center, &g.chol, g.log_det))
            .collect())
    }

    /// Region index maximizing the gate at `x`.
    pub fn region_of(&self, x: &DVector<f64>) -> Result<usize> {
        let g = self.log_gate(x)?;
        Ok(argmax(&g))
    }
}

pub(crate) struct GateFactor {
    pub chol: Cholesky<f64, Dyn>,
    pub log_det: f64,
    pub inv: DMatrix<f64>,
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Paired directions and cue vectors, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    /// `L × N`.
    pub x: DMatrix<f64>,
    /// `D × N`.
    pub y: DMatrix<f64>,
}

impl TrainingSet {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.ncols() != y.ncols() {
            return Err(Error::Shape(format!(
                "{} directions but {} cue vectors",
                x.ncols(),
                y.ncols()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn from_rows(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let l = x[0].len();
        let d = y.first().map_or(0, |r| r.len());
        if x.iter().any(|r| r.len() != l) || y.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let xm = DMatrix::from_fn(l, x.len(), |i, n| x[n][i]);
        let ym = DMatrix::from_fn(d, y.len(), |i, n| y[n][i]);
        Self::new(xm, ym)
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim_x(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim_y(&self) -> usize {
        self.y.nrows()
    }

    /// Checks that every direction is a valid (azimuth, elevation) pair in degrees.
    pub fn validate_directions(&self) -> Result<()> {
        if self.dim_x() != 2 {
            return Err(Error::Shape("directions must be (azimuth, elevation)".into()));
        }
        for n in 0..self.len() {
            let (az, el) = (self.x[(0, n)], self.x[(1, n)]);
            if !(az > -180.0 && az <= 180.0) || !(-90.0..=90.0).contains(&el) {
                return Err(Error::OutOfRange(format!("sample {n}: ({az}, {el})")));
            }
        }
        Ok(())
    }

    /// Samples at the given column indices.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self { x: self.x.select_columns(indices), y: self.y.select_columns(indices) }
    }
}

/// Posterior region memberships, `K × N`, columns summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub r: DMatrix<f64>,
}

impl Responsibilities {
    pub fn n_components(&self) -> usize {
        self.r.nrows()
    }

    pub fn len(&self) -> usize {
        self.r.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hard assignment of each sample to `labels[n]`.
    pub fn from_labels(labels: &[usize], k: usize) -> Self {
        let mut r = DMatrix::zeros(k, labels.len());
        for (n, &l) in labels.iter().enumerate() {
            r[(l, n)] = 1.0;
        }
        Self { r }
    }
}

/// Direction of the learned regression, for parameter-count comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearningDirection {
    /// Directions to cues (the one trained here).
    LowToHigh,
    /// Cues to directions.
    HighToLow,
}

/// Number of free parameters of a `K`-region map between `R^L` and `R^D`.
pub fn param_count(k: u64, d: u64, l: u64, direction: LearningDirection) -> u64 {
    match direction {
        LearningDirection::LowToHigh => k * (d * (l + 2) + l + l * l + 1),
        LearningDirection::HighToLow => k * (l * (d + 2) + d + d * d + 1),
    }
}
