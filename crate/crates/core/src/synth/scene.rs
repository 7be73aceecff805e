use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::head::VirtualHead;
use super::{AZIMUTH_RANGE, ELEVATION_RANGE};
use crate::error::{Error, Result};
use crate::spectro::{istft_channel, stft_channel, AudioBuffer, StftParams};

/// One emitter: a direction `[azimuth, elevation]` in degrees and a mono signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSource {
    pub direction: [f64; 2],
    pub signal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub sources: Vec<SceneSource>,
    /// RMS of the additive white noise in dB full scale; `None` for none.
    pub noise_level_db: Option<f64>,
    /// Seeds the additive noise.
    pub seed: u64,
}

pub(crate) fn check_direction(direction: [f64; 2]) -> Result<()> {
    let [az, el] = direction;
    if !(AZIMUTH_RANGE.0..=AZIMUTH_RANGE.1).contains(&az) || !(ELEVATION_RANGE.0..=ELEVATION_RANGE.1).contains(&el) {
        return Err(Error::OutOfRange(format!(
            "direction ({az}, {el}) outside [{}, {}] x [{}, {}]",
            AZIMUTH_RANGE.0, AZIMUTH_RANGE.1, ELEVATION_RANGE.0, ELEVATION_RANGE.1
        )));
    }
    Ok(())
}

/// STFT-domain rendering of a mono signal through the head, with the same
/// analysis parameters used for cue extraction.
fn render_one(head: &VirtualHead, direction: [f64; 2], signal: &[f64], params: &StftParams) -> Result<AudioBuffer> {
    check_direction(direction)?;
    let spec = stft_channel(signal, params)?;
    let freqs: Vec<f64> = (0..=spec.n_bins).map(|b| params.bin_frequency(b)).collect();
    let nyquist = params.sample_rate as f64 / 2.0;
    let (hl, hr) = head.response(direction, &freqs, nyquist);
    let mut left = spec.clone();
    let mut right = spec;
    for (s, h) in [(&mut left, &hl), (&mut right, &hr)] {
        for v in s.dc.iter_mut() {
            *v *= h[0];
        }
        for t in 0..s.n_frames {
            for f in 0..s.n_bins {
                *s.get_mut(f, t) *= h[f + 1];
            }
        }
    }
    AudioBuffer::new(
        istft_channel(&left, signal.len())?,
        istft_channel(&right, signal.len())?,
        params.sample_rate,
    )
}

/// The mixture and each source's noise-free binaural image.
pub fn render_images(head: &VirtualHead, scene: &Scene, params: &StftParams) -> Result<(AudioBuffer, Vec<AudioBuffer>)> {
    let first = scene
        .sources
        .first()
        .ok_or_else(|| Error::InvalidArgument("scene has no sources".into()))?;
    let n = first.signal.len();
    if scene.sources.iter().any(|s| s.signal.len() != n) {
        return Err(Error::Shape("scene signals differ in length".into()));
    }
    let images = scene
        .sources
        .iter()
        .map(|s| render_one(head, s.direction, &s.signal, params))
        .collect::<Result<Vec<_>>>()?;
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for img in &images {
        left.iter_mut().zip(&img.left).for_each(|(a, b)| *a += b);
        right.iter_mut().zip(&img.right).for_each(|(a, b)| *a += b);
    }
    if let Some(db) = scene.noise_level_db {
        let sd = 10f64.powf(db / 20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
        for v in left.iter_mut().chain(right.iter_mut()) {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += sd * e;
        }
    }
    Ok((AudioBuffer::new(left, right, params.sample_rate)?, images))
}

/// Each source filtered by the head, summed, plus white noise.
pub fn render_scene(head: &VirtualHead, scene: &Scene, params: &StftParams) -> Result<AudioBuffer> {
    Ok(render_images(head, scene, params)?.0)
}

/// Gaussian white noise with unit variance.
pub fn white_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Speech-like sparse signal: Hann-windowed bursts of band-limited noise,
/// 40–160 ms long, one to two octaves wide, separated by silent gaps.
pub fn burst_signal(n: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let nyquist = sr / 2.0;
    let mut out = vec![0.0; n];
    let mut planner = FftPlanner::<f64>::new();
    let mut pos = (rng.random_range(0.0..0.08) * sr) as usize;
    while pos < n {
        let len = ((rng.random_range(0.04..0.16) * sr) as usize).min(n - pos);
        if len < 16 {
            break;
        }
        let lo = rng.random_range(150.0..(nyquist / 4.0));
        let hi = (lo * 2f64.powf(rng.random_range(1.0..2.0))).min(nyquist * 0.95);
        let mut buf: Vec<Complex64> =
            (0..len).map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0)).collect();
        planner.plan_fft_forward(len).process(&mut buf);
        for (k, v) in buf.iter_mut().enumerate() {
            let f = k.min(len - k) as f64 * sr / len as f64;
            if f < lo || f > hi {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        planner.plan_fft_inverse(len).process(&mut buf);
        let rms = (buf.iter().map(|c| c.re * c.re).sum::<f64>() / len as f64).sqrt().max(1e-12);
        let amp = 10f64.powf(rng.random_range(-6.0..0.0) / 20.0) * 0.1 / rms;
        for i in 0..len {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64).cos();
            out[pos + i] += amp * w * buf[i].re;
        }
        pos += len + (rng.random_range(0.02..0.15) * sr) as usize;
    }
    out
}
