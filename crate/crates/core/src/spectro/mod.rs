//! Stereo audio to interaural cue conversion.
//!
//! The pipeline is `stft` on both channels, [`interaural_cues`] on the pair
//! of spectrograms, then [`assemble_ilpd`] to build one observation vector
//! per frame: full-band ILD followed by the real and imaginary parts of the
//! low-band IPD. [`istft`] inverts the analysis for masked reconstruction.

mod cues;
mod stft;

pub use cues::{
    assemble_ilpd, interaural_cues, mean_ilpd, BandConfig, CueKind, DimMap, IlpdObservation,
    InterauralSpectrogram, ObservationSet,
};
pub use stft::{istft, istft_channel, stft, stft_channel, ComplexSpectrogram, StftParams};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Two-channel audio at a common sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(left: Vec<f64>, right: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::Shape(format!(
                "left has {} samples, right has {}",
                left.len(),
                right.len()
            )));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(Self { left, right, sample_rate })
    }

    /// Same signal on both channels.
    pub fn from_mono(signal: Vec<f64>, sample_rate: u32) -> Self {
        Self { right: signal.clone(), left: signal, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }
}

/// Everything that determines the layout and values of extracted cues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub stft: StftParams,
    pub band: BandConfig,
    /// Cells below this level (dB relative to the loudest cell) are missing.
    pub power_threshold_db: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { stft: StftParams::default(), band: BandConfig::default(), power_threshold_db: -40.0 }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.band.validate(self.stft.n_bins())
    }

    /// Interaural spectrogram and per-frame ILPD observations of `audio`.
    pub fn extract(&self, audio: &AudioBuffer) -> Result<(InterauralSpectrogram, ObservationSet)> {
        self.validate()?;
        let (l, r) = stft(audio, &self.stft)?;
        let ispec = interaural_cues(&l, &r, self.power_threshold_db)?;
        let obs = assemble_ilpd(&ispec, &self.band)?;
        Ok((ispec, obs))
    }

    /// Hex SHA-256 of the analysis and band parameters. Models and features
    /// carrying different fingerprints have incompatible cue layouts.
    pub fn fingerprint(&self) -> String {
        let canon = format!(
            "stft:{}:{:.6}:{:.6};ild:{}-{};ipd:{}-{}",
            self.stft.sample_rate,
            self.stft.window_ms,
            self.stft.hop_ms,
            self.band.ild_bins.0,
            self.band.ild_bins.1,
            self.band.ipd_bins.0,
            self.band.ipd_bins.1
        );
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
