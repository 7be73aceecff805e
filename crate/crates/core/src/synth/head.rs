use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const N_HARMONICS: usize = 9;

/// Parameters of a seeded virtual head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadSpec {
    pub seed: u64,
    /// Distance between the ears, meters.
    pub ear_spacing: f64,
    pub speed_of_sound: f64,
    /// Standard deviation of the per-ear direction-dependent gain, dB.
    pub gain_db: f64,
    /// Head-shadow ILD at the Nyquist frequency for a fully lateral source, dB.
    pub shadow_db: f64,
    /// Standard deviation of the direction-dependent delay perturbation, seconds.
    pub delay_jitter: f64,
    /// Number of cosine terms describing how the gains vary over frequency.
    pub freq_terms: usize,
    /// Decay exponent of the frequency terms; larger is smoother.
    pub smoothness: f64,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            ear_spacing: 0.18,
            speed_of_sound: 343.0,
            gain_db: 3.0,
            shadow_db: 12.0,
            delay_jitter: 0.0,
            freq_terms: 8,
            smoothness: 1.0,
        }
    }
}

/// Direction-dependent gains and delays per ear. Gains are real
/// spherical-harmonic expansions up to order two whose coefficients vary
/// smoothly with frequency, plus a lateral head-shadow term; delays are the
/// interaural travel time plus a small harmonic perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualHead {
    pub spec: HeadSpec,
    /// `[ear][term][harmonic]`, dB.
    gain: [Vec<[f64; N_HARMONICS]>; 2],
    /// `[ear][harmonic]`, seconds.
    delay: [[f64; N_HARMONICS]; 2],
    identity: bool,
}

/// Unit direction for azimuth/elevation in degrees: x front, y left, z up.
pub fn unit_vector(direction: [f64; 2]) -> [f64; 3] {
    let (az, el) = (direction[0].to_radians(), direction[1].to_radians());
    [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
}

fn harmonics(u: [f64; 3]) -> [f64; N_HARMONICS] {
    let [x, y, z] = u;
    [1.0, x, y, z, x * y, y * z, x * z, x * x - y * y, 3.0 * z * z - 1.0]
}

impl VirtualHead {
    pub fn new(spec: HeadSpec) -> Result<Self> {
        if !(spec.ear_spacing >= 0.0 && spec.speed_of_sound > 0.0 && spec.gain_db >= 0.0 && spec.delay_jitter >= 0.0)
        {
            return Err(Error::Config("head parameters must be non-negative".into()));
        }
        if spec.freq_terms == 0 {
            return Err(Error::Config("head needs at least one frequency term".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut draw_gain = || {
            (0..spec.freq_terms)
                .map(|m| {
                    let scale = spec.gain_db / (1.0 + m as f64).powf(spec.smoothness);
                    let mut row = [0.0; N_HARMONICS];
                    // the constant harmonic is a direction-independent coloration
                    for v in row.iter_mut().skip(1) {
                        *v = scale * unit.sample(&mut rng);
                    }
                    row
                })
                .collect::<Vec<_>>()
        };
        let gain = [draw_gain(), draw_gain()];
        let mut delay = [[0.0; N_HARMONICS]; 2];
        for ear in &mut delay {
            for v in ear.iter_mut().skip(1) {
                *v = spec.delay_jitter * unit.sample(&mut rng);
            }
        }
        Ok(Self { spec, gain, delay, identity: false })
    }

    /// Unit gain and zero delay everywhere.
    pub fn identity() -> Self {
        let spec = HeadSpec { gain_db: 0.0, shadow_db: 0.0, delay_jitter: 0.0, ear_spacing: 0.0, ..HeadSpec::default() };
        Self { spec, gain: [vec![], vec![]], delay: [[0.0; N_HARMONICS]; 2], identity: true }
    }

    /// Left and right gain in dB and delay in seconds at `freq` Hz, with
    /// `nyquist` setting the frequency scale.
    fn ear_params(&self, ear: usize, u: [f64; 3], h: &[f64; N_HARMONICS], freq: f64, nyquist: f64) -> (f64, f64) {
        if self.identity {
            return (0.0, 0.0);
        }
        let side = if ear == 0 { 1.0 } else { -1.0 };
        let nu = (freq / nyquist).clamp(0.0, 1.0);
        let mut g = 0.5 * side * self.spec.shadow_db * nu.powf(0.8) * u[1];
        for (m, row) in self.gain[ear].iter().enumerate() {
            let basis = (std::f64::consts::PI * m as f64 * nu).cos();
            g += basis * row.iter().zip(h).map(|(c, y)| c * y).sum::<f64>();
        }
        let itd = -side * self.spec.ear_spacing / (2.0 * self.spec.speed_of_sound) * u[1];
        let tau = itd + self.delay[ear].iter().zip(h).map(|(c, y)| c * y).sum::<f64>();
        (g, tau)
    }

    /// Complex responses `(left, right)` for a direction at the given
    /// frequencies.
    pub fn response(&self, direction: [f64; 2], freqs: &[f64], nyquist: f64) -> (Vec<Complex64>, Vec<Complex64>) {
        let u = unit_vector(direction);
        let h = harmonics(u);
        let mut out = [Vec::with_capacity(freqs.len()), Vec::with_capacity(freqs.len())];
        for (ear, resp) in out.iter_mut().enumerate() {
            for &f in freqs {
                let (g, tau) = self.ear_params(ear, u, &h, f, nyquist);
                let mag = 10f64.powf(g / 20.0);
                resp.push(Complex64::from_polar(mag, -2.0 * std::f64::consts::PI * f * tau));
            }
        }
        let [l, r] = out;
        (l, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn freqs() -> Vec<f64> {
        (0..=512).map(|b| b as f64 * 15.625).collect()
    }

    #[test]
    fn identity_head_is_transparent() {
        let (l, r) = VirtualHead::identity().response([37.0, -12.0], &freqs(), 8000.0);
        assert!(l.iter().chain(&r).all(|c| (c - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn lateral_source_is_louder_and_earlier_at_the_near_ear() {
        let head = VirtualHead::new(HeadSpec { gain_db: 0.0, delay_jitter: 0.0, ..HeadSpec::default() }).unwrap();
        let (l, r) = head.response([90.0, 0.0], &freqs(), 8000.0);
        let f = 100;
        assert!(l[f].norm() > r[f].norm());
        // right channel lags: its phase relative to left is negative
        let rel = (r[f] / l[f]).arg();
        let expected = -2.0 * std::f64::consts::PI * freqs()[f] * 0.18 / 343.0;
        let wrapped = (expected + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
        assert!((rel - wrapped).abs() < 1e-9);
    }

    #[test]
    fn front_and_back_differ() {
        let head = VirtualHead::new(HeadSpec { seed: 3, ..HeadSpec::default() }).unwrap();
        let (lf, rf) = head.response([30.0, 0.0], &freqs(), 8000.0);
        let (lb, rb) = head.response([150.0, 0.0], &freqs(), 8000.0);
        let ild = |l: &[Complex64], r: &[Complex64]| -> Vec<f64> {
            l.iter().zip(r).map(|(a, b)| 20.0 * (b.norm() / a.norm()).log10()).collect()
        };
        let (a, b) = (ild(&lf, &rf), ild(&lb, &rb));
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff > 0.5, "front/back ILD difference only {diff} dB");
    }

    #[test]
    fn gains_vary_smoothly_with_direction() {
        let head = VirtualHead::new(HeadSpec { seed: 4, ..HeadSpec::default() }).unwrap();
        let f = freqs();
        let (l0, _) = head.response([10.0, 5.0], &f, 8000.0);
        let (l1, _) = head.response([10.1, 5.0], &f, 8000.0);
        for (a, b) in l0.iter().zip(&l1) {
            assert!((20.0 * (a.norm() / b.norm()).log10()).abs() < 0.1);
        }
    }
}
