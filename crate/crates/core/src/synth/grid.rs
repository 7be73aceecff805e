use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::head::VirtualHead;
use super::scene::{check_direction, render_scene, white_noise, Scene, SceneSource};
use crate::error::{Error, Result};
use crate::ppam::TrainingSet;
use crate::spectro::{mean_ilpd, FeatureConfig};

/// Regular azimuth/elevation grid, degrees, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub azimuth: (f64, f64),
    pub elevation: (f64, f64),
    pub spacing: f64,
    /// Length of the white-noise probe rendered at each direction.
    pub duration_secs: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { azimuth: (-160.0, 160.0), elevation: (-60.0, 60.0), spacing: 2.0, duration_secs: 0.25 }
    }
}

fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| lo + step * i as f64).collect()
}

impl GridSpec {
    /// Directions in azimuth-major order.
    pub fn directions(&self) -> Result<Vec<[f64; 2]>> {
        if !(self.spacing > 0.0) || self.azimuth.0 > self.azimuth.1 || self.elevation.0 > self.elevation.1 {
            return Err(Error::Config("grid needs positive spacing and ordered ranges".into()));
        }
        let els = axis(self.elevation.0, self.elevation.1, self.spacing);
        let dirs: Vec<[f64; 2]> = axis(self.azimuth.0, self.azimuth.1, self.spacing)
            .into_iter()
            .flat_map(|az| els.iter().map(move |&el| [az, el]))
            .collect();
        for &d in &dirs {
            check_direction(d)?;
        }
        Ok(dirs)
    }
}

/// Renders one shared white-noise probe from every grid direction and pairs
/// each direction with the mean ILPD vector of its recording.
pub fn build_training_grid(
    head: &VirtualHead,
    grid: &GridSpec,
    features: &FeatureConfig,
    seed: u64,
) -> Result<TrainingSet> {
    features.validate()?;
    let dirs = grid.directions()?;
    let n = (grid.duration_secs * features.stft.sample_rate as f64).round() as usize;
    let probe = white_noise(n, seed);
    let cues = dirs
        .par_iter()
        .map(|&direction| {
            let scene = Scene { sources: vec![SceneSource { direction, signal: probe.clone() }], noise_level_db: None, seed };
            let audio = render_scene(head, &scene, &features.stft)?;
            let (_, obs) = features.extract(&audio)?;
            Ok(mean_ilpd(&obs.frames)?.y)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let d = features.band.dim();
    let x = DMatrix::from_fn(2, dirs.len(), |i, j| dirs[j][i]);
    let y = DMatrix::from_fn(d, dirs.len(), |i, j| cues[j][i]);
    TrainingSet::new(x, y)
}

/// Random subset emulating a coarser grid of spacing `delta`: keeps
/// `round(N (spacing / delta)²)` samples, in their original order.
pub fn decimate(set: &TrainingSet, spacing: f64, delta: f64, seed: u64) -> Result<TrainingSet> {
    if !(delta >= spacing && spacing > 0.0) {
        return Err(Error::InvalidArgument(format!("cannot decimate a {spacing}° grid to {delta}°")));
    }
    let keep = ((set.len() as f64) * (spacing / delta).powi(2)).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, set.len(), keep.min(set.len())).into_vec();
    idx.sort_unstable();
    Ok(set.select(&idx))
}
