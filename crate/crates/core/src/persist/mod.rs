//! Files: the array container, run configuration, and WAV audio.

mod container;

pub use container::{ArrayContainer, ArrayData, ArrayEntry, FORMAT_VERSION, MAGIC};

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppam::{Component, PpamModel, TrainOptions, TrainingSet};
use crate::spectro::{AudioBuffer, DimMap, FeatureConfig, IlpdObservation, ObservationSet};
use crate::synth::{GridSpec, HeadSpec};
use crate::vessl::VesslOptions;

/// Everything a command needs besides its input files. Serialized into
/// every output so a run can be repeated from its results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub features: FeatureConfig,
    pub train: TrainOptions,
    /// Component counts of the coarse-to-fine model ladder.
    pub ladder: Vec<usize>,
    pub vessl: VesslOptions,
    pub head: HeadSpec,
    pub grid: GridSpec,
    /// Spacing of the posterior density tables, degrees.
    pub posterior_step: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            features: FeatureConfig::default(),
            train: TrainOptions { n_components: 64, ..TrainOptions::default() },
            ladder: vec![1, 2, 4, 8, 16, 32, 64],
            vessl: VesslOptions::default(),
            head: HeadSpec::default(),
            grid: GridSpec::default(),
            posterior_step: 2.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if self.train.n_components == 0 || self.train.max_iter == 0 || !(self.train.tol >= 0.0) {
            return Err(Error::Config("training needs components, iterations and a non-negative tolerance".into()));
        }
        if self.ladder.is_empty() || self.ladder.contains(&0) || self.ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("ladder must be strictly increasing positive component counts".into()));
        }
        if self.vessl.n_sources == 0 || self.vessl.max_iter == 0 || !(self.vessl.tol >= 0.0) {
            return Err(Error::Config("separation needs sources, iterations and a non-negative tolerance".into()));
        }
        if !(self.posterior_step > 0.0) {
            return Err(Error::Config("posterior_step must be positive".into()));
        }
        self.grid.directions()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn fingerprint(&self) -> String {
        self.features.fingerprint()
    }

    /// Empty container stamped with this configuration.
    pub fn container(&self) -> ArrayContainer {
        ArrayContainer::new(self.fingerprint(), self.to_json())
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v)
}

fn dims_of(c: &ArrayContainer, name: &str, n: usize) -> Result<Vec<usize>> {
    let e = c.get(name)?;
    if e.shape.len() != n {
        return Err(Error::Format(format!("entry {name} should have {n} dimensions")));
    }
    Ok(e.shape.clone())
}

/// Stores a model as stacked `centers` (K×L), `gammas` (K×L×L), `slopes`
/// (K×D×L), `offsets` (K×D) and `noise_var` (D).
pub fn model_to_container(model: &PpamModel, out: &mut ArrayContainer) -> Result<()> {
    model.validate()?;
    let (k, l, d) = (model.n_components(), model.dim_x(), model.dim_y());
    let cat = |f: &dyn Fn(&Component) -> Vec<f64>| model.components.iter().flat_map(f).collect::<Vec<f64>>();
    out.push_f64("centers", &[k, l], cat(&|c| c.center.iter().copied().collect()))?;
    out.push_f64("gammas", &[k, l, l], cat(&|c| row_major(&c.gamma)))?;
    out.push_f64("slopes", &[k, d, l], cat(&|c| row_major(&c.slope)))?;
    out.push_f64("offsets", &[k, d], cat(&|c| c.offset.iter().copied().collect()))?;
    out.push_f64("noise_var", &[d], model.noise_var.iter().copied().collect())
}

pub fn model_from_container(c: &ArrayContainer) -> Result<PpamModel> {
    let s = dims_of(c, "slopes", 3)?;
    let (k, d, l) = (s[0], s[1], s[2]);
    let centers = c.f64s("centers", &[k, l])?;
    let gammas = c.f64s("gammas", &[k, l, l])?;
    let slopes = c.f64s("slopes", &[k, d, l])?;
    let offsets = c.f64s("offsets", &[k, d])?;
    let noise = c.f64s("noise_var", &[d])?;
    let components = (0..k)
        .map(|i| Component {
            center: DVector::from_column_slice(&centers[i * l..(i + 1) * l]),
            gamma: from_row_major(l, l, &gammas[i * l * l..(i + 1) * l * l]),
            slope: from_row_major(d, l, &slopes[i * d * l..(i + 1) * d * l]),
            offset: DVector::from_column_slice(&offsets[i * d..(i + 1) * d]),
        })
        .collect();
    let model = PpamModel { components, noise_var: DVector::from_column_slice(noise) };
    model.validate().map_err(|e| Error::Format(format!("stored model is invalid: {e}")))?;
    Ok(model)
}

/// `x` (L×N) and `y` (D×N).
pub fn trainset_to_container(set: &TrainingSet, out: &mut ArrayContainer) -> Result<()> {
    out.push_f64("x", &[set.dim_x(), set.len()], row_major(&set.x))?;
    out.push_f64("y", &[set.dim_y(), set.len()], row_major(&set.y))
}

pub fn trainset_from_container(c: &ArrayContainer) -> Result<TrainingSet> {
    let sx = dims_of(c, "x", 2)?;
    let sy = dims_of(c, "y", 2)?;
    let x = from_row_major(sx[0], sx[1], c.f64s("x", &sx)?);
    let y = from_row_major(sy[0], sy[1], c.f64s("y", &sy)?);
    TrainingSet::new(x, y).map_err(|e| Error::Format(e.to_string()))
}

/// `y` (T×D) and `avail` (T×D, 0 or 1).
pub fn observations_to_container(obs: &ObservationSet, out: &mut ArrayContainer) -> Result<()> {
    let (t, d) = (obs.n_frames(), obs.dim());
    out.push_f64("y", &[t, d], obs.frames.iter().flat_map(|f| f.y.iter().copied()).collect())?;
    let avail = obs.frames.iter().flat_map(|f| f.avail.iter().map(|&a| a as u8)).collect();
    out.push("avail", &[t, d], ArrayData::U8(avail))
}

/// Observations stored for the cue layout of `features`.
pub fn observations_from_container(c: &ArrayContainer, features: &FeatureConfig) -> Result<ObservationSet> {
    c.require_fingerprint(&features.fingerprint())?;
    let s = dims_of(c, "y", 2)?;
    let y = c.f64s("y", &s)?;
    let avail = match &c.get("avail")?.data {
        ArrayData::U8(v) if c.get("avail")?.shape == s => v,
        _ => return Err(Error::Format("entry avail must be u8 with the shape of y".into())),
    };
    let (t, d) = (s[0], s[1]);
    let frames = (0..t)
        .map(|i| IlpdObservation { y: y[i * d..(i + 1) * d].to_vec(), avail: avail[i * d..(i + 1) * d].iter().map(|&a| a != 0).collect() })
        .collect();
    ObservationSet::new(DimMap::new(features.band), frames)
}

/// Stereo WAV as `f64` samples in `[-1, 1]`.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 2 {
        return Err(Error::InvalidArgument(format!("{} has {} channels, expected 2", path.display(), spec.channels)));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader.samples::<i32>().map(|s| s.map(|v| v as f64 * scale)).collect::<std::result::Result<_, _>>()?
        }
    };
    let left = samples.iter().step_by(2).copied().collect();
    let right = samples.iter().skip(1).step_by(2).copied().collect();
    AudioBuffer::new(left, right, spec.sample_rate)
}

/// Writes 32-bit float stereo.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec { channels: 2, sample_rate: audio.sample_rate, bits_per_sample: 32, sample_format: hound::SampleFormat::Float };
    let mut w = hound::WavWriter::create(path, spec)?;
    for (l, r) in audio.left.iter().zip(&audio.right) {
        w.write_sample(*l as f32)?;
        w.write_sample(*r as f32)?;
    }
    w.finalize()?;
    Ok(())
}
