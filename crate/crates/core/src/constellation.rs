//! Gray-mapped m-PSK and square m-QAM.
//!
//! QAM points live on the unnormalized odd-integer grid
//! `I, Q in {-(sqrt(m)-1), ..., sqrt(m)-1}` and PSK points on the unit
//! circle. Power normalization happens once, in the OFDM modulator, so the
//! replica-energy constants in [`crate::nld`] apply to these points as-is.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstellationKind {
    Psk,
    Qam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    kind: ConstellationKind,
    m: usize,
    bits_per_symbol: usize,
    /// Indexed by the bit label, MSB first.
    points: Vec<Complex64>,
    /// Levels per axis for QAM, 0 for PSK.
    side: usize,
    e2: f64,
    e4: f64,
}

fn gray_to_binary(mut g: usize) -> usize {
    let mut b = g;
    while g > 0 {
        g >>= 1;
        b ^= g;
    }
    b
}

fn binary_to_gray(b: usize) -> usize {
    b ^ (b >> 1)
}

impl Constellation {
    /// Square m-QAM; `m` must be an even power of two (4, 16, 64, 256, ...).
    pub fn qam(m: usize) -> Result<Self> {
        let bits = m.trailing_zeros() as usize;
        if !m.is_power_of_two() || m < 4 || !bits.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "square QAM order must be 4^k, got {m}"
            )));
        }
        let side = 1usize << (bits / 2);
        let half = bits / 2;
        let level = |label: usize| (2 * gray_to_binary(label)) as f64 - (side - 1) as f64;
        let points = (0..m)
            .map(|label| Complex64::new(level(label >> half), level(label & (side - 1))))
            .collect();
        // Exact in double: integer numerators.
        let mf = m as f64;
        let e2 = 2.0 * (mf - 1.0) / 3.0;
        let e4 = 4.0 * (mf - 1.0) * (7.0 * mf - 13.0) / 45.0;
        Ok(Constellation {
            kind: ConstellationKind::Qam,
            m,
            bits_per_symbol: bits,
            points,
            side,
            e2,
            e4,
        })
    }

    /// Gray-mapped m-PSK on the unit circle; `m` a power of two, at least 2.
    pub fn psk(m: usize) -> Result<Self> {
        if !m.is_power_of_two() || m < 2 {
            return Err(Error::InvalidParameter(format!(
                "PSK order must be a power of two >= 2, got {m}"
            )));
        }
        let points = (0..m)
            .map(|label| {
                let pos = gray_to_binary(label);
                if m == 2 {
                    Complex64::new(if pos == 0 { 1.0 } else { -1.0 }, 0.0)
                } else {
                    Complex64::from_polar(1.0, 2.0 * PI * pos as f64 / m as f64)
                }
            })
            .collect();
        Ok(Constellation {
            kind: ConstellationKind::Psk,
            m,
            bits_per_symbol: m.trailing_zeros() as usize,
            points,
            side: 0,
            e2: 1.0,
            e4: 1.0,
        })
    }

    pub fn new(kind: ConstellationKind, m: usize) -> Result<Self> {
        match kind {
            ConstellationKind::Psk => Self::psk(m),
            ConstellationKind::Qam => Self::qam(m),
        }
    }

    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.m
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// `E[|S|^2]` over equiprobable points.
    pub fn e2(&self) -> f64 {
        self.e2
    }

    /// `E[|S|^4]` over equiprobable points.
    pub fn e4(&self) -> f64 {
        self.e4
    }

    /// Closed-form `(E|S|^2, E|S|^4)`, cross-checked against the average over
    /// the actual points.
    pub fn moments(&self) -> Result<(f64, f64)> {
        let n = self.points.len() as f64;
        let d2 = self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / n;
        let d4 = self.points.iter().map(|p| p.norm_sqr().powi(2)).sum::<f64>() / n;
        for (name, closed, direct) in [("E|S|^2", self.e2, d2), ("E|S|^4", self.e4, d4)] {
            if (closed - direct).abs() > 1e-12 * closed.abs().max(1.0) {
                return Err(Error::MomentMismatch { name, closed, direct });
            }
        }
        Ok((self.e2, self.e4))
    }

    pub fn map_bits(&self, bits: &[u8]) -> Result<Vec<Complex64>> {
        let k = self.bits_per_symbol;
        if !bits.len().is_multiple_of(k) {
            return Err(Error::LengthNotMultiple {
                len: bits.len(),
                multiple: k,
            });
        }
        Ok(bits
            .chunks_exact(k)
            .map(|chunk| {
                let label = chunk.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
                self.points[label]
            })
            .collect())
    }

    /// `n` independent, uniformly drawn points.
    pub fn random_symbols<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Complex64> {
        (0..n)
            .map(|_| self.points[rng.random_range(0..self.points.len())])
            .collect()
    }

    /// Nearest point (Euclidean). For QAM each axis is decided independently;
    /// an exact midpoint goes to the level of smaller magnitude, and between
    /// `-1` and `+1` to `+1`.
    pub fn slice_hard(&self, r: &[Complex64]) -> Vec<Complex64> {
        r.iter().map(|&v| self.points[self.slice_label(v)]).collect()
    }

    /// Bit label of the nearest point.
    pub fn slice_label(&self, v: Complex64) -> usize {
        match self.kind {
            ConstellationKind::Qam => {
                let half = self.bits_per_symbol / 2;
                let i = binary_to_gray(self.axis_index(v.re));
                let q = binary_to_gray(self.axis_index(v.im));
                (i << half) | q
            }
            ConstellationKind::Psk => {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (label, p) in self.points.iter().enumerate() {
                    let d = (v - p).norm_sqr();
                    if d < best_d {
                        best = label;
                        best_d = d;
                    }
                }
                best
            }
        }
    }

    // Level index 0..side of the nearest odd-integer level.
    fn axis_index(&self, x: f64) -> usize {
        let top = (self.side - 1) as f64;
        let clamped = x.clamp(-top, top);
        let lo = ((clamped + top) / 2.0).floor();
        let lo = lo.clamp(0.0, top.max(0.0));
        let lo_idx = lo as usize;
        if lo_idx + 1 >= self.side {
            return self.side - 1;
        }
        let lo_level = 2.0 * lo - top;
        let hi_level = lo_level + 2.0;
        let d_lo = clamped - lo_level;
        let d_hi = hi_level - clamped;
        if d_lo < d_hi {
            lo_idx
        } else if d_hi < d_lo {
            lo_idx + 1
        } else if lo_level.abs() < hi_level.abs() {
            lo_idx
        } else {
            // Equal magnitude only for -1 / +1: prefer positive.
            lo_idx + 1
        }
    }

    /// Hard-decision bits for each received value.
    pub fn demap_hard(&self, r: &[Complex64]) -> Vec<u8> {
        let k = self.bits_per_symbol;
        let mut out = Vec::with_capacity(r.len() * k);
        for &v in r {
            let label = self.slice_label(v);
            out.extend((0..k).rev().map(|b| ((label >> b) & 1) as u8));
        }
        out
    }

    /// Max-log soft metrics for one received value, appended to `out`, one per
    /// bit in label order. Positive favours bit 0. `weight` scales the
    /// metric (e.g. `|H|^2` after zero-forcing).
    pub fn soft_metrics(&self, v: Complex64, weight: f64, out: &mut Vec<f64>) {
        match self.kind {
            ConstellationKind::Qam => {
                let half = self.bits_per_symbol / 2;
                self.axis_metrics(v.re, half, weight, out);
                self.axis_metrics(v.im, half, weight, out);
            }
            ConstellationKind::Psk => {
                for b in (0..self.bits_per_symbol).rev() {
                    let mut d0 = f64::INFINITY;
                    let mut d1 = f64::INFINITY;
                    for (label, p) in self.points.iter().enumerate() {
                        let d = (v - p).norm_sqr();
                        if (label >> b) & 1 == 0 {
                            d0 = d0.min(d);
                        } else {
                            d1 = d1.min(d);
                        }
                    }
                    out.push(weight * (d1 - d0));
                }
            }
        }
    }

    fn axis_metrics(&self, x: f64, half: usize, weight: f64, out: &mut Vec<f64>) {
        let top = (self.side - 1) as f64;
        for b in (0..half).rev() {
            let mut d0 = f64::INFINITY;
            let mut d1 = f64::INFINITY;
            for idx in 0..self.side {
                let level = 2.0 * idx as f64 - top;
                let d = (x - level) * (x - level);
                if (binary_to_gray(idx) >> b) & 1 == 0 {
                    d0 = d0.min(d);
                } else {
                    d1 = d1.min(d);
                }
            }
            out.push(weight * (d1 - d0));
        }
    }
}
