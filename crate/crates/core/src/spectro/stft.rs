use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Analysis parameters. Window and hop are given in milliseconds and rounded
/// to whole samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftParams {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
}

impl Default for StftParams {
    fn default() -> Self {
        Self { sample_rate: 16_000, window_ms: 64.0, hop_ms: 8.0 }
    }
}

impl StftParams {
    pub fn window_len(&self) -> usize {
        (self.sample_rate as f64 * self.window_ms / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.sample_rate as f64 * self.hop_ms / 1000.0).round() as usize
    }

    /// Number of positive-frequency bins kept (DC excluded, Nyquist included).
    pub fn n_bins(&self) -> usize {
        self.window_len() / 2
    }

    pub fn freq_resolution(&self) -> f64 {
        self.sample_rate as f64 / self.window_len() as f64
    }

    /// Center frequency in Hz of a 1-based bin index.
    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.freq_resolution()
    }

    /// Frames for `n` samples: one centered frame every hop, first at sample 0.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples / self.hop_len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.window_len();
        let h = self.hop_len();
        if self.sample_rate == 0 || w < 4 || w % 2 != 0 || h == 0 || h > w {
            return Err(Error::Config(format!(
                "invalid STFT parameters: window {w} samples, hop {h} samples"
            )));
        }
        Ok(())
    }

    pub(crate) fn window(&self) -> Vec<f64> {
        let n = self.window_len();
        (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
    }
}

/// One channel's spectrogram. `bins` holds bins `1..=n_bins` frame by frame;
/// the DC coefficient is kept aside in `dc` so the transform stays invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub params: StftParams,
    pub n_bins: usize,
    pub n_frames: usize,
    pub bins: Vec<Complex64>,
    pub dc: Vec<Complex64>,
}

impl ComplexSpectrogram {
    pub fn zeros(params: StftParams, n_frames: usize) -> Self {
        let n_bins = params.n_bins();
        Self {
            params,
            n_bins,
            n_frames,
            bins: vec![Complex64::new(0.0, 0.0); n_bins * n_frames],
            dc: vec![Complex64::new(0.0, 0.0); n_frames],
        }
    }

    /// Coefficient at 0-based bin offset `f` (frequency bin `f + 1`), frame `t`.
    #[inline]
    pub fn get(&self, f: usize, t: usize) -> Complex64 {
        self.bins[t * self.n_bins + f]
    }

    #[inline]
    pub fn get_mut(&mut self, f: usize, t: usize) -> &mut Complex64 {
        &mut self.bins[t * self.n_bins + f]
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.bins[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn hop_secs(&self) -> f64 {
        self.params.hop_len() as f64 / self.params.sample_rate as f64
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_bins == other.n_bins && self.n_frames == other.n_frames
    }

    pub fn max_power(&self) -> f64 {
        self.bins.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max)
    }

    /// Multiplies every coefficient (and DC) by a real mask in `[0, 1]`,
    /// indexed like `bins`. DC follows the lowest bin.
    pub fn masked(&self, mask: &[f64]) -> Result<Self> {
        if mask.len() != self.bins.len() {
            return Err(Error::Shape(format!(
                "mask has {} cells, spectrogram has {}",
                mask.len(),
                self.bins.len()
            )));
        }
        let mut out = self.clone();
        for (c, &m) in out.bins.iter_mut().zip(mask) {
            *c *= m;
        }
        for t in 0..self.n_frames {
            out.dc[t] *= mask[t * self.n_bins];
        }
        Ok(out)
    }
}

impl std::ops::Add for &ComplexSpectrogram {
    type Output = ComplexSpectrogram;

    fn add(self, rhs: Self) -> ComplexSpectrogram {
        assert!(self.same_shape(rhs), "adding spectrograms of different shapes");
        let mut out = self.clone();
        out.bins.iter_mut().zip(&rhs.bins).for_each(|(a, b)| *a += b);
        out.dc.iter_mut().zip(&rhs.dc).for_each(|(a, b)| *a += b);
        out
    }
}

struct Plan {
    window: Vec<f64>,
    n: usize,
    hop: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Plan {
    fn new(params: &StftParams, inverse: bool) -> Result<Self> {
        params.validate()?;
        let n = params.window_len();
        let mut planner = FftPlanner::new();
        let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
        Ok(Self { window: params.window(), n, hop: params.hop_len(), fft })
    }
}

/// Spectrogram of a single channel.
pub fn stft_channel(signal: &[f64], params: &StftParams) -> Result<ComplexSpectrogram> {
    let plan = Plan::new(params, false)?;
    if signal.len() < plan.n {
        return Err(Error::TooShort { len: signal.len(), needed: plan.n });
    }
    let n_frames = params.n_frames(signal.len());
    let mut spec = ComplexSpectrogram::zeros(*params, n_frames);
    let half = plan.n / 2;
    let mut buf = vec![Complex64::new(0.0, 0.0); plan.n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); plan.fft.get_inplace_scratch_len()];
    for t in 0..n_frames {
        let start = (t * plan.hop) as isize - half as isize;
        for (i, slot) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let v = if idx >= 0 && (idx as usize) < signal.len() {
                signal[idx as usize] * plan.window[i]
            } else {
                0.0
            };
            *slot = Complex64::new(v, 0.0);
        }
        plan.fft.process_with_scratch(&mut buf, &mut scratch);
        spec.dc[t] = buf[0];
        spec.bins[t * spec.n_bins..(t + 1) * spec.n_bins].copy_from_slice(&buf[1..=half]);
    }
    Ok(spec)
}

/// Left and right spectrograms of a stereo buffer.
pub fn stft(
    audio: &AudioBuffer,
    params: &StftParams,
) -> Result<(ComplexSpectrogram, ComplexSpectrogram)> {
    if audio.sample_rate != params.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "audio is {} Hz, analysis expects {} Hz",
            audio.sample_rate, params.sample_rate
        )));
    }
    Ok((stft_channel(&audio.left, params)?, stft_channel(&audio.right, params)?))
}

/// Weighted overlap-add resynthesis normalized by the summed squared window.
pub fn istft_channel(spec: &ComplexSpectrogram, length: usize) -> Result<Vec<f64>> {
    let plan = Plan::new(&spec.params, true)?;
    let half = plan.n / 2;
    if spec.n_bins != half || spec.dc.len() != spec.n_frames {
        return Err(Error::Shape("spectrogram does not match its STFT parameters".into()));
    }
    let mut out = vec![0.0; length];
    let mut norm = vec![0.0; length];
    let mut buf = vec![Complex64::new(0.0, 0.0); plan.n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); plan.fft.get_inplace_scratch_len()];
    let scale = 1.0 / plan.n as f64;
    for t in 0..spec.n_frames {
        buf[0] = Complex64::new(spec.dc[t].re, 0.0);
        let frame = spec.frame(t);
        for f in 1..half {
            buf[f] = frame[f - 1];
            buf[plan.n - f] = frame[f - 1].conj();
        }
        buf[half] = Complex64::new(frame[half - 1].re, 0.0);
        plan.fft.process_with_scratch(&mut buf, &mut scratch);
        let start = (t * plan.hop) as isize - half as isize;
        for i in 0..plan.n {
            let idx = start + i as isize;
            if idx < 0 || idx as usize >= length {
                continue;
            }
            let w = plan.window[i];
            out[idx as usize] += buf[i].re * scale * w;
            norm[idx as usize] += w * w;
        }
    }
    for (o, &w) in out.iter_mut().zip(&norm) {
        if w > 1e-12 {
            *o /= w;
        } else {
            *o = 0.0;
        }
    }
    Ok(out)
}

/// Stereo resynthesis from a pair of spectrograms.
pub fn istft(
    left: &ComplexSpectrogram,
    right: &ComplexSpectrogram,
    original_length: usize,
) -> Result<AudioBuffer> {
    if !left.same_shape(right) || left.params != right.params {
        return Err(Error::Shape("left and right spectrograms differ in shape".into()));
    }
    Ok(AudioBuffer {
        left: istft_channel(left, original_length)?,
        right: istft_channel(right, original_length)?,
        sample_rate: left.params.sample_rate,
    })
}
