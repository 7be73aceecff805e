use serde::{Deserialize, Serialize};

use super::{ComplexSpectrogram, StftParams};
use crate::error::{Error, Result};

/// Per-cell interaural level and phase differences with an availability mask.
/// All arrays are frame-major: index `t * n_bins + f`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterauralSpectrogram {
    pub n_bins: usize,
    pub n_frames: usize,
    /// ILD in dB.
    pub alpha: Vec<f64>,
    /// IPD as a unit complex number `(re, im)`.
    pub phi: Vec<[f64; 2]>,
    pub chi: Vec<bool>,
}

impl InterauralSpectrogram {
    #[inline]
    fn idx(&self, f: usize, t: usize) -> usize {
        t * self.n_bins + f
    }

    pub fn is_available(&self, f: usize, t: usize) -> bool {
        self.chi[self.idx(f, t)]
    }

    /// ILD at 0-based bin offset `f`, frame `t`; `None` when missing.
    pub fn ild(&self, f: usize, t: usize) -> Option<f64> {
        let i = self.idx(f, t);
        self.chi[i].then(|| self.alpha[i])
    }

    pub fn ipd(&self, f: usize, t: usize) -> Option<[f64; 2]> {
        let i = self.idx(f, t);
        self.chi[i].then(|| self.phi[i])
    }

    pub fn missing_fraction(&self) -> f64 {
        self.chi.iter().filter(|&&c| !c).count() as f64 / self.chi.len().max(1) as f64
    }
}

/// Interaural cues `I = s_R / s_L` on cells where both channels exceed
/// `power_threshold_db` relative to the strongest cell of either channel.
pub fn interaural_cues(
    left: &ComplexSpectrogram,
    right: &ComplexSpectrogram,
    power_threshold_db: f64,
) -> Result<InterauralSpectrogram> {
    if !left.same_shape(right) {
        return Err(Error::Shape(format!(
            "left is {}x{}, right is {}x{}",
            left.n_bins, left.n_frames, right.n_bins, right.n_frames
        )));
    }
    let max_power = left.max_power().max(right.max_power());
    let floor = max_power * 10f64.powf(power_threshold_db / 10.0);
    let n = left.bins.len();
    let mut alpha = vec![0.0; n];
    let mut phi = vec![[1.0, 0.0]; n];
    let mut chi = vec![false; n];
    if max_power > 0.0 {
        for i in 0..n {
            let (l, r) = (left.bins[i], right.bins[i]);
            let (pl, pr) = (l.norm_sqr(), r.norm_sqr());
            if pl > floor && pr > floor && pl > 0.0 && pr > 0.0 {
                let ratio = r / l;
                let mag = ratio.norm();
                alpha[i] = 20.0 * mag.log10();
                phi[i] = [ratio.re / mag, ratio.im / mag];
                chi[i] = true;
            }
        }
    }
    Ok(InterauralSpectrogram { n_bins: left.n_bins, n_frames: left.n_frames, alpha, phi, chi })
}

/// Frequency bins (1-based FFT indices, inclusive) used for each cue kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BandConfig {
    pub ild_bins: (usize, usize),
    pub ipd_bins: (usize, usize),
}

impl Default for BandConfig {
    /// Full-band ILD and IPD between 300 Hz and 2 kHz for the default analysis.
    fn default() -> Self {
        Self::from_frequencies(&StftParams::default(), 300.0, 2000.0)
    }
}

impl BandConfig {
    /// Full-band ILD, IPD over bins whose center lies in `[ipd_lo_hz, ipd_hi_hz]`.
    pub fn from_frequencies(params: &StftParams, ipd_lo_hz: f64, ipd_hi_hz: f64) -> Self {
        let res = params.freq_resolution();
        let n_bins = params.n_bins();
        let lo = ((ipd_lo_hz / res).ceil() as usize).max(1);
        let hi = ((ipd_hi_hz / res + 1e-9).floor() as usize).min(n_bins);
        Self { ild_bins: (1, n_bins), ipd_bins: (lo, hi) }
    }

    pub fn validate(&self, n_bins: usize) -> Result<()> {
        for (name, (lo, hi)) in [("ild", self.ild_bins), ("ipd", self.ipd_bins)] {
            if lo < 1 || hi > n_bins || lo > hi {
                return Err(Error::Band(format!(
                    "{name} band {lo}..={hi} is empty or outside 1..={n_bins}"
                )));
            }
        }
        Ok(())
    }

    pub fn n_ild(&self) -> usize {
        self.ild_bins.1 + 1 - self.ild_bins.0
    }

    pub fn n_ipd(&self) -> usize {
        self.ipd_bins.1 + 1 - self.ipd_bins.0
    }

    pub fn dim(&self) -> usize {
        self.n_ild() + 2 * self.n_ipd()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CueKind {
    Ild,
    IpdRe,
    IpdIm,
}

/// Layout of an ILPD vector: ILD block, then IPD real block, then IPD
/// imaginary block, each in increasing frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct DimMap {
    band: BandConfig,
    entries: Vec<(CueKind, usize)>,
}

impl DimMap {
    pub fn new(band: BandConfig) -> Self {
        let mut entries = Vec::with_capacity(band.dim());
        entries.extend((band.ild_bins.0..=band.ild_bins.1).map(|b| (CueKind::Ild, b)));
        entries.extend((band.ipd_bins.0..=band.ipd_bins.1).map(|b| (CueKind::IpdRe, b)));
        entries.extend((band.ipd_bins.0..=band.ipd_bins.1).map(|b| (CueKind::IpdIm, b)));
        Self { band, entries }
    }

    pub fn band(&self) -> &BandConfig {
        &self.band
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(kind, 1-based frequency bin)` of dimension `d`.
    pub fn entry(&self, d: usize) -> (CueKind, usize) {
        self.entries[d]
    }

    pub fn entries(&self) -> &[(CueKind, usize)] {
        &self.entries
    }

    pub fn index_of(&self, kind: CueKind, bin: usize) -> Option<usize> {
        let (lo, hi, base) = match kind {
            CueKind::Ild => (self.band.ild_bins.0, self.band.ild_bins.1, 0),
            CueKind::IpdRe => (self.band.ipd_bins.0, self.band.ipd_bins.1, self.band.n_ild()),
            CueKind::IpdIm => (
                self.band.ipd_bins.0,
                self.band.ipd_bins.1,
                self.band.n_ild() + self.band.n_ipd(),
            ),
        };
        (lo..=hi).contains(&bin).then(|| base + bin - lo)
    }
}

/// One frame's ILPD vector with per-dimension availability.
#[derive(Debug, Clone, PartialEq)]
pub struct IlpdObservation {
    pub y: Vec<f64>,
    pub avail: Vec<bool>,
}

impl IlpdObservation {
    /// Fully available observation.
    pub fn complete(y: Vec<f64>) -> Self {
        let avail = vec![true; y.len()];
        Self { y, avail }
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn n_available(&self) -> usize {
        self.avail.iter().filter(|&&a| a).count()
    }
}

/// A time series of ILPD observations sharing one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub dims: DimMap,
    pub frames: Vec<IlpdObservation>,
}

impl ObservationSet {
    pub fn new(dims: DimMap, frames: Vec<IlpdObservation>) -> Result<Self> {
        if let Some(bad) = frames.iter().position(|f| f.y.len() != dims.len() || f.avail.len() != dims.len()) {
            return Err(Error::Shape(format!(
                "frame {bad} does not have {} dimensions",
                dims.len()
            )));
        }
        Ok(Self { dims, frames })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

/// Builds the per-frame ILPD observations of an interaural spectrogram.
pub fn assemble_ilpd(ispec: &InterauralSpectrogram, band: &BandConfig) -> Result<ObservationSet> {
    band.validate(ispec.n_bins)?;
    let dims = DimMap::new(*band);
    let frames = (0..ispec.n_frames)
        .map(|t| {
            let (y, avail) = dims
                .entries()
                .iter()
                .map(|&(kind, bin)| {
                    let i = t * ispec.n_bins + bin - 1;
                    let v = match kind {
                        CueKind::Ild => ispec.alpha[i],
                        CueKind::IpdRe => ispec.phi[i][0],
                        CueKind::IpdIm => ispec.phi[i][1],
                    };
                    (v, ispec.chi[i])
                })
                .unzip();
            IlpdObservation { y, avail }
        })
        .collect();
    Ok(ObservationSet { dims, frames })
}

/// Per-dimension mean over the frames where that dimension is available.
/// Dimensions never observed come out unavailable with value 0.
pub fn mean_ilpd(observations: &[IlpdObservation]) -> Result<IlpdObservation> {
    let first = observations
        .first()
        .ok_or_else(|| Error::InvalidArgument("mean of zero frames".into()))?;
    let d = first.dim();
    let mut sum = vec![0.0; d];
    let mut count = vec![0usize; d];
    for obs in observations {
        if obs.dim() != d {
            return Err(Error::Shape("frames differ in dimension".into()));
        }
        for i in 0..d {
            if obs.avail[i] {
                sum[i] += obs.y[i];
                count[i] += 1;
            }
        }
    }
    let y = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let avail = count.iter().map(|&c| c > 0).collect();
    Ok(IlpdObservation { y, avail })
}
