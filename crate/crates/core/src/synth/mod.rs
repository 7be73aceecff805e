//! Ground-truth data: samples from a known map, a parametric virtual head,
//! and rendered multi-source scenes.

mod grid;
mod head;
mod scene;

pub use grid::{build_training_grid, decimate, GridSpec};
pub use head::{unit_vector, HeadSpec, VirtualHead};
pub use scene::{burst_signal, render_images, render_scene, white_noise, Scene, SceneSource};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::linalg;
use crate::ppam::{Component, PpamModel, TrainingSet};

/// Azimuth and elevation limits (degrees) of renderable directions.
pub const AZIMUTH_RANGE: (f64, f64) = (-160.0, 160.0);
pub const ELEVATION_RANGE: (f64, f64) = (-60.0, 60.0);

fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Draws `n` pairs from the generative model: region uniformly, then
/// `x ~ N(c_k, Γ_k)` and `y = A_k x + b_k + N(0, Σ)`.
pub fn sample_ppam(model: &PpamModel, n: usize, seed: u64) -> Result<TrainingSet> {
    model.validate()?;
    let (l, d) = (model.dim_x(), model.dim_y());
    let chols = model
        .components
        .iter()
        .map(|c| linalg::cholesky(&c.gamma, "region covariance").map(|ch| ch.l()))
        .collect::<Result<Vec<_>>>()?;
    let noise_sd = model.noise_var.map(f64::sqrt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(l, n);
    let mut y = DMatrix::zeros(d, n);
    for i in 0..n {
        let k = rng.random_range(0..model.n_components());
        let c = &model.components[k];
        let xi = &c.center + &chols[k] * gaussian_vec(l, &mut rng);
        let yi = &c.slope * &xi + &c.offset + noise_sd.component_mul(&gaussian_vec(d, &mut rng));
        x.set_column(i, &xi);
        y.set_column(i, &yi);
    }
    TrainingSet::new(x, y)
}

/// A random well-conditioned model: centers in `[-5, 5]^L`, region
/// covariances with eigenvalues in `[0.5, 2]` rescaled to unit determinant,
/// standard normal slopes and offsets, isotropic noise `noise_var`.
pub fn random_ppam(k: usize, l: usize, d: usize, noise_var: f64, seed: u64) -> PpamModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let components = (0..k)
        .map(|_| {
            let center = DVector::from_fn(l, |_, _| rng.random_range(-5.0..5.0));
            let g: DMatrix<f64> = DMatrix::from_fn(l, l, |_, _| StandardNormal.sample(&mut rng));
            let q = g.qr().q();
            let eig = DVector::from_fn(l, |_, _| rng.random_range(0.5..2.0));
            let scale = eig.iter().product::<f64>().powf(-1.0 / l as f64);
            let gamma = linalg::symmetrize(&(&q * DMatrix::from_diagonal(&(eig * scale)) * q.transpose()));
            let slope: DMatrix<f64> = DMatrix::from_fn(d, l, |_, _| StandardNormal.sample(&mut rng));
            let offset = gaussian_vec(d, &mut rng);
            Component { center, gamma, slope, offset }
        })
        .collect();
    PpamModel { components, noise_var: DVector::from_element(d, noise_var) }
}
