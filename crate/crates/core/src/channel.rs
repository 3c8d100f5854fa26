//! Block-fading multipath channels and additive white Gaussian noise.
//!
//! Taps are spaced one FFT-rate sample apart, i.e. `oversample` simulation
//! samples. The multipath profiles are exponential power-delay profiles with
//! unit total mean power; `expa` is short (3 taps) and `expb` medium (8 taps).

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{complex_gaussian, ComplexVec};
use crate::ofdm::OfdmConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelProfile {
    Flat,
    ExpA,
    ExpB,
}

/// Exponential power-delay profile `P_n ~ exp(-n / tau)`, `n = 0..n_taps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpProfile {
    pub n_taps: usize,
    pub tau: f64,
}

impl ExpProfile {
    pub fn tap_powers(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.n_taps).map(|n| (-(n as f64) / self.tau).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|p| p / total).collect()
    }
}

/// Profile parameters for the two multipath models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileTable {
    pub expa: ExpProfile,
    pub expb: ExpProfile,
}

impl Default for ProfileTable {
    fn default() -> Self {
        ProfileTable {
            expa: ExpProfile { n_taps: 3, tau: 1.0 },
            expb: ExpProfile { n_taps: 8, tau: 2.5 },
        }
    }
}

impl ProfileTable {
    pub fn validate(&self, cfg: &OfdmConfig) -> Result<()> {
        for (name, p) in [("expa", self.expa), ("expb", self.expb)] {
            if p.n_taps == 0 || !(p.tau > 0.0) {
                return Err(Error::Config(format!("{name}: needs n_taps >= 1 and tau > 0")));
            }
            if p.n_taps - 1 > cfg.cp_len {
                return Err(Error::Config(format!(
                    "{name}: {} taps exceed the cyclic prefix of {} samples",
                    p.n_taps, cfg.cp_len
                )));
            }
        }
        Ok(())
    }

    pub fn tap_powers(&self, profile: ChannelProfile) -> Vec<f64> {
        match profile {
            ChannelProfile::Flat => vec![1.0],
            ChannelProfile::ExpA => self.expa.tap_powers(),
            ChannelProfile::ExpB => self.expb.tap_powers(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Impulse response at FFT-rate spacing.
    pub taps: ComplexVec,
    /// `H_k = sum_n h_n exp(-j 2 pi f_k n / n_fft)` on the active subcarriers.
    pub h_freq: ComplexVec,
    pub profile_id: String,
}

impl ChannelRealization {
    pub fn from_taps(taps: ComplexVec, cfg: &OfdmConfig, profile_id: &str) -> Self {
        let h_freq = cfg
            .layout
            .frequencies()
            .iter()
            .map(|&f| {
                taps.iter()
                    .enumerate()
                    .map(|(n, h)| {
                        h * Complex64::from_polar(
                            1.0,
                            -2.0 * std::f64::consts::PI * (f * n as i64) as f64 / cfg.n_fft as f64,
                        )
                    })
                    .sum()
            })
            .collect();
        ChannelRealization { taps, h_freq, profile_id: profile_id.to_string() }
    }

    pub fn flat(cfg: &OfdmConfig) -> Self {
        Self::from_taps(vec![Complex64::new(1.0, 0.0)], cfg, "flat")
    }

    /// Linear convolution of a sample stream with the taps, truncated to the
    /// input length. The first tap is at zero delay, so symbol boundaries stay
    /// put and the cyclic prefix absorbs the spill-over.
    pub fn apply(&self, samples: &[Complex64], oversample: usize) -> ComplexVec {
        if self.taps.len() == 1 {
            return samples.iter().map(|v| v * self.taps[0]).collect();
        }
        let mut out = vec![Complex64::new(0.0, 0.0); samples.len()];
        for (n, h) in self.taps.iter().enumerate() {
            let delay = n * oversample;
            for (o, x) in out[delay.min(samples.len())..].iter_mut().zip(samples) {
                *o += h * x;
            }
        }
        out
    }
}

/// Rayleigh taps with the profile's mean powers; constant for a packet.
pub fn draw_multipath<R: Rng + ?Sized>(
    profile: ChannelProfile,
    table: &ProfileTable,
    cfg: &OfdmConfig,
    rng: &mut R,
) -> ChannelRealization {
    if profile == ChannelProfile::Flat {
        return ChannelRealization::flat(cfg);
    }
    let taps = table
        .tap_powers(profile)
        .iter()
        .map(|&p| complex_gaussian(rng, p))
        .collect();
    let id = match profile {
        ChannelProfile::ExpA => "expa",
        _ => "expb",
    };
    ChannelRealization::from_taps(taps, cfg, id)
}

/// Noise level for a target SNR per active subcarrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub snr_db: f64,
    /// Noise variance per demodulated subcarrier.
    pub sigma_w2: f64,
}

impl NoiseSpec {
    /// `sigma_w2 = signal_power / 10^(snr_db / 10)`; infinite SNR means no noise.
    pub fn new(snr_db: f64, signal_power: f64) -> Self {
        let sigma_w2 = if snr_db.is_infinite() && snr_db > 0.0 {
            0.0
        } else {
            signal_power / 10f64.powf(snr_db / 10.0)
        };
        NoiseSpec { snr_db, sigma_w2 }
    }

    /// Per-sample variance that yields `sigma_w2` on each subcarrier after
    /// [`crate::ofdm::demodulate`].
    pub fn sample_variance(&self, cfg: &OfdmConfig) -> f64 {
        self.sigma_w2 * cfg.power_scale * cfg.power_scale / cfg.n_total() as f64
    }
}

/// Adds i.i.d. circular complex Gaussian noise of the given per-sample
/// variance. Zero variance returns the input and draws nothing.
pub fn awgn<R: Rng + ?Sized>(samples: &[Complex64], variance: f64, rng: &mut R) -> ComplexVec {
    if variance == 0.0 {
        return samples.to_vec();
    }
    samples.iter().map(|v| v + complex_gaussian(rng, variance)).collect()
}
