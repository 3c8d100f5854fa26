//! OFDM modulation with cyclic prefix and time-domain oversampling.
//!
//! Active subcarriers occupy a contiguous band of signed bin frequencies
//! around DC, optionally with the DC bin left empty. The frequency-domain
//! distortion model in [`crate::nld`] works on the *span* of that band (every
//! bin from the lowest to the highest active frequency, unused bins zero), so
//! that intermodulation index arithmetic matches the physical frequencies.

use num_complex::Complex64;
use rand::Rng;

use crate::constellation::Constellation;
use crate::dsp::{fft_in_place, ifft_in_place_unnormalized, ComplexVec};
use crate::{Error, Result};

/// Placement of the `N` active subcarriers on signed bin frequencies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubcarrierLayout {
    freqs: Vec<i64>,
    /// Position of each active subcarrier within the span.
    span_index: Vec<usize>,
    span: usize,
}

impl SubcarrierLayout {
    /// Frequencies must be strictly increasing.
    pub fn from_frequencies(freqs: Vec<i64>) -> Result<Self> {
        if freqs.is_empty() || freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "subcarrier frequencies must be non-empty and strictly increasing".into(),
            ));
        }
        let f0 = freqs[0];
        let span = (freqs[freqs.len() - 1] - f0 + 1) as usize;
        let span_index = freqs.iter().map(|&f| (f - f0) as usize).collect();
        Ok(SubcarrierLayout {
            freqs,
            span_index,
            span,
        })
    }

    /// Subcarriers `0..n` with no gaps; the span equals the active set.
    pub fn contiguous(n: usize) -> Self {
        Self::from_frequencies((0..n as i64).collect()).expect("n > 0")
    }

    /// `n` subcarriers centred on DC; with `dc_null` the DC bin is skipped.
    pub fn centered(n: usize, dc_null: bool) -> Self {
        let n = n as i64;
        let freqs = if dc_null {
            let lower = n / 2;
            (-lower..0).chain(1..=n - lower).collect()
        } else {
            let lower = n / 2;
            (-lower..n - lower).collect()
        };
        Self::from_frequencies(freqs).expect("n > 0")
    }

    pub fn n_active(&self) -> usize {
        self.freqs.len()
    }

    pub fn span_len(&self) -> usize {
        self.span
    }

    pub fn frequencies(&self) -> &[i64] {
        &self.freqs
    }

    pub fn is_contiguous(&self) -> bool {
        self.span == self.freqs.len()
    }

    /// Scatters active values into a zero-filled span vector.
    pub fn expand(&self, active: &[Complex64]) -> ComplexVec {
        assert_eq!(active.len(), self.freqs.len());
        if self.is_contiguous() {
            return active.to_vec();
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.span];
        for (&pos, &v) in self.span_index.iter().zip(active) {
            out[pos] = v;
        }
        out
    }

    /// Gathers the active values out of a span vector.
    pub fn extract(&self, span: &[Complex64]) -> ComplexVec {
        assert_eq!(span.len(), self.span);
        self.span_index.iter().map(|&pos| span[pos]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfdmConfig {
    pub n_fft: usize,
    pub cp_len: usize,
    pub oversample: usize,
    pub layout: SubcarrierLayout,
    /// Modulator output scale; see [`OfdmConfig::with_unit_power`].
    pub power_scale: f64,
}

impl OfdmConfig {
    pub fn new(
        n_active: usize,
        n_fft: usize,
        cp_len: usize,
        oversample: usize,
        dc_null: bool,
    ) -> Result<Self> {
        let layout = SubcarrierLayout::centered(n_active, dc_null);
        Self::with_layout(layout, n_fft, cp_len, oversample)
    }

    pub fn with_layout(
        layout: SubcarrierLayout,
        n_fft: usize,
        cp_len: usize,
        oversample: usize,
    ) -> Result<Self> {
        if oversample == 0 {
            return Err(Error::InvalidParameter("oversample must be >= 1".into()));
        }
        if cp_len >= n_fft {
            return Err(Error::InvalidParameter(format!(
                "cyclic prefix {cp_len} must be shorter than the FFT size {n_fft}"
            )));
        }
        let half = (n_fft / 2) as i64;
        let fits = layout
            .frequencies()
            .iter()
            .all(|&f| f >= -half && f < n_fft as i64 - half);
        if layout.span_len() > n_fft || !fits {
            return Err(Error::InvalidParameter(format!(
                "{} active subcarriers (span {}) do not fit an FFT of {n_fft}",
                layout.n_active(),
                layout.span_len()
            )));
        }
        Ok(OfdmConfig {
            n_fft,
            cp_len,
            oversample,
            layout,
            power_scale: 1.0,
        })
    }

    /// Sets `power_scale` so that symbols with `E|S|^2 = e2` on every active
    /// subcarrier give unit average sample power.
    pub fn with_unit_power(mut self, e2: f64) -> Self {
        self.power_scale = self.n_total() as f64 / (self.n_active() as f64 * e2).sqrt();
        self
    }

    /// 20 MHz legacy: 52 active subcarriers, 64-point FFT, 16-sample prefix.
    pub fn legacy52(oversample: usize) -> Self {
        Self::new(52, 64, 16, oversample, true).expect("valid preset")
    }

    /// 120 active subcarriers on a 128-point FFT.
    pub fn n120(oversample: usize) -> Self {
        Self::new(120, 128, 32, oversample, true).expect("valid preset")
    }

    /// 484 active subcarriers on a 512-point FFT.
    pub fn vht484(oversample: usize) -> Self {
        Self::new(484, 512, 128, oversample, true).expect("valid preset")
    }

    pub fn n_active(&self) -> usize {
        self.layout.n_active()
    }

    /// Simulation transform size `n_fft * oversample`.
    pub fn n_total(&self) -> usize {
        self.n_fft * self.oversample
    }

    pub fn cp_samples(&self) -> usize {
        self.cp_len * self.oversample
    }

    /// Samples per OFDM symbol including the prefix, at the simulation rate.
    pub fn symbol_len(&self) -> usize {
        (self.n_fft + self.cp_len) * self.oversample
    }

    /// Amplitude factor `g` with `z[n] = g * sum_k S_k exp(j 2 pi f_k n / n_total)`.
    ///
    /// A memoryless polynomial `beta_p` acting on the samples is equivalent
    /// to `beta_p g^(p-1)` acting on the subcarrier symbols.
    pub fn sample_gain(&self) -> f64 {
        self.power_scale / self.n_total() as f64
    }

    fn bin(&self, f: i64) -> usize {
        f.rem_euclid(self.n_total() as i64) as usize
    }
}

/// IDFT of the zero-padded symbol at `n_fft * oversample` bins, cyclic prefix
/// prepended, scaled by `power_scale`.
///
/// # Panics
///
/// Panics if `sym.len()` differs from the number of active subcarriers.
pub fn modulate(sym: &[Complex64], cfg: &OfdmConfig) -> ComplexVec {
    assert_eq!(sym.len(), cfg.n_active(), "symbol length must equal N");
    let n = cfg.n_total();
    let mut body = vec![Complex64::new(0.0, 0.0); n];
    for (&f, &s) in cfg.layout.frequencies().iter().zip(sym) {
        body[cfg.bin(f)] = s;
    }
    ifft_in_place_unnormalized(&mut body);
    let scale = cfg.sample_gain();
    let cp = cfg.cp_samples();
    let mut out = Vec::with_capacity(n + cp);
    out.extend(body[n - cp..].iter().map(|v| v * scale));
    out.extend(body.iter().map(|v| v * scale));
    out
}

/// Drops the prefix, takes the DFT, keeps the active bins and undoes the
/// modulator scale. Out-of-band bins are discarded.
pub fn demodulate(samples: &[Complex64], cfg: &OfdmConfig) -> Result<ComplexVec> {
    if samples.len() != cfg.symbol_len() {
        return Err(Error::LengthMismatch {
            expected: cfg.symbol_len(),
            got: samples.len(),
        });
    }
    let mut body = samples[cfg.cp_samples()..].to_vec();
    fft_in_place(&mut body);
    let inv = 1.0 / cfg.power_scale;
    Ok(cfg
        .layout
        .frequencies()
        .iter()
        .map(|&f| body[cfg.bin(f)] * inv)
        .collect())
}

/// Known training symbols followed by payload symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFrame {
    /// Unit-modulus BPSK, one vector per training symbol.
    pub training: Vec<ComplexVec>,
    pub data: Vec<ComplexVec>,
}

impl TrainingFrame {
    pub fn new(training: Vec<ComplexVec>, data: Vec<ComplexVec>) -> Result<Self> {
        if training.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "joint estimation needs at least two training symbols, got {}",
                training.len()
            )));
        }
        Ok(TrainingFrame { training, data })
    }

    /// Training symbols at amplitude `a`, e.g. `sqrt(e2)` of the data
    /// constellation so that training and payload share the drive level.
    pub fn scaled_training(&self, a: f64) -> Vec<ComplexVec> {
        self.training
            .iter()
            .map(|s| s.iter().map(|v| v * a).collect())
            .collect()
    }
}

/// Fixed pseudo-random BPSK sequence (x^7 + x^4 + 1 LFSR, all-ones seed),
/// standing in for a long training field.
pub fn fixed_training_symbol(n: usize) -> ComplexVec {
    let mut state: u8 = 0x7f;
    (0..n)
        .map(|_| {
            let bit = ((state >> 6) ^ (state >> 3)) & 1;
            state = ((state << 1) | bit) & 0x7f;
            Complex64::new(if bit == 0 { 1.0 } else { -1.0 }, 0.0)
        })
        .collect()
}

/// Builds `m` BPSK training symbols and `n_data` random payload symbols.
///
/// The first training symbol is [`fixed_training_symbol`]; the others are
/// random and redrawn until each differs from every earlier training symbol
/// in at least `N/4` positions.
pub fn build_training_frame<R: Rng + ?Sized>(
    cfg: &OfdmConfig,
    constellation: &Constellation,
    m: usize,
    n_data: usize,
    rng: &mut R,
) -> Result<TrainingFrame> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "joint estimation needs at least two training symbols, got {m}"
        )));
    }
    let n = cfg.n_active();
    let mut training = vec![fixed_training_symbol(n)];
    while training.len() < m {
        let candidate: ComplexVec = (0..n)
            .map(|_| Complex64::new(if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0))
            .collect();
        let distinct = training.iter().all(|t| {
            t.iter().zip(&candidate).filter(|(a, b)| a != b).count() * 4 >= n
        });
        if distinct {
            training.push(candidate);
        }
    }
    let points = constellation.points();
    let data = (0..n_data)
        .map(|_| (0..n).map(|_| points[rng.random_range(0..points.len())]).collect())
        .collect();
    TrainingFrame::new(training, data)
}
