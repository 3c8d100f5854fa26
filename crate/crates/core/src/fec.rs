//! Convolutional coding (K = 7, generators 133/171 octal), rate-3/4
//! puncturing, per-symbol block interleaving and soft-input Viterbi decoding.
//!
//! Bit metrics follow the convention of
//! [`Constellation::soft_metrics`](crate::constellation::Constellation::soft_metrics):
//! positive values favour a 0 bit, zero means no information.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CONSTRAINT_LENGTH: usize = 7;
pub const TAIL_BITS: usize = CONSTRAINT_LENGTH - 1;
const G0: u32 = 0o133;
const G1: u32 = 0o171;
const N_STATES: usize = 1 << TAIL_BITS;
/// Keep-mask over the mother-code stream `A0 B0 A1 B1 A2 B2`.
const PUNCTURE_34: [bool; 6] = [true, true, true, false, false, true];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodeRate {
    #[serde(rename = "uncoded")]
    Uncoded,
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "3/4")]
    ThreeQuarters,
}

impl CodeRate {
    /// Data bits carried by `n_cbps` coded bits.
    pub fn data_bits(&self, n_cbps: usize) -> Result<usize> {
        let (num, den) = match self {
            CodeRate::Uncoded => (1, 1),
            CodeRate::Half => (1, 2),
            CodeRate::ThreeQuarters => (3, 4),
        };
        if !n_cbps.is_multiple_of(den) {
            return Err(Error::LengthNotMultiple { len: n_cbps, multiple: den });
        }
        Ok(n_cbps / den * num)
    }

    fn keep(&self, mother_index: usize) -> bool {
        match self {
            CodeRate::ThreeQuarters => PUNCTURE_34[mother_index % 6],
            _ => true,
        }
    }
}

fn parity(x: u32) -> u8 {
    (x.count_ones() & 1) as u8
}

fn branch_outputs(state: usize, bit: u8) -> (u8, u8, usize) {
    let w = ((bit as u32) << TAIL_BITS) | state as u32;
    (parity(w & G0), parity(w & G1), (w >> 1) as usize)
}

/// Rate-1/2 mother code output `A0 B0 A1 B1 ..` for `bits` followed by
/// six zero tail bits.
pub fn conv_encode(bits: &[u8]) -> Vec<u8> {
    let mut state = 0usize;
    let mut out = Vec::with_capacity(2 * (bits.len() + TAIL_BITS));
    for &b in bits.iter().chain([0u8; TAIL_BITS].iter()) {
        let (a, c, next) = branch_outputs(state, b & 1);
        out.push(a);
        out.push(c);
        state = next;
    }
    out
}

pub fn puncture<T: Copy>(mother: &[T], rate: CodeRate) -> Vec<T> {
    mother
        .iter()
        .enumerate()
        .filter(|(i, _)| rate.keep(*i))
        .map(|(_, v)| *v)
        .collect()
}

/// Coded length of `n_bits` information bits (tail included for coded rates).
pub fn coded_len(n_bits: usize, rate: CodeRate) -> usize {
    match rate {
        CodeRate::Uncoded => n_bits,
        _ => (0..2 * (n_bits + TAIL_BITS)).filter(|&i| rate.keep(i)).count(),
    }
}

pub fn encode(bits: &[u8], rate: CodeRate) -> Vec<u8> {
    match rate {
        CodeRate::Uncoded => bits.to_vec(),
        _ => puncture(&conv_encode(bits), rate),
    }
}

/// Reinserts zero metrics at punctured positions of a mother stream of
/// `mother_len` values.
pub fn depuncture(metrics: &[f64], rate: CodeRate, mother_len: usize) -> Result<Vec<f64>> {
    let mut it = metrics.iter();
    let out: Vec<f64> = (0..mother_len)
        .map(|i| if rate.keep(i) { it.next().copied() } else { Some(0.0) })
        .collect::<Option<_>>()
        .ok_or(Error::LengthMismatch { expected: coded_len(mother_len / 2 - TAIL_BITS, rate), got: metrics.len() })?;
    if it.next().is_some() {
        return Err(Error::LengthMismatch {
            expected: coded_len(mother_len / 2 - TAIL_BITS, rate),
            got: metrics.len(),
        });
    }
    Ok(out)
}

/// `+1` for a 0 bit, `-1` for a 1 bit.
pub fn hard_metrics(bits: &[u8]) -> Vec<f64> {
    bits.iter().map(|&b| if b & 1 == 0 { 1.0 } else { -1.0 }).collect()
}

/// Maximum-likelihood decoding of `n_bits` information bits over the
/// zero-terminated trellis, with traceback from the final all-zero state.
pub fn viterbi_decode(metrics: &[f64], rate: CodeRate, n_bits: usize) -> Result<Vec<u8>> {
    if rate == CodeRate::Uncoded {
        if metrics.len() != n_bits {
            return Err(Error::LengthMismatch { expected: n_bits, got: metrics.len() });
        }
        return Ok(metrics.iter().map(|&m| u8::from(m < 0.0)).collect());
    }
    let steps = n_bits + TAIL_BITS;
    let mother = depuncture(metrics, rate, 2 * steps)?;

    let mut table = [(0u8, 0u8, 0usize); 2 * N_STATES];
    for s in 0..N_STATES {
        for b in 0..2u8 {
            table[2 * s + b as usize] = branch_outputs(s, b);
        }
    }
    let signed = |m: f64, bit: u8| if bit == 0 { m } else { -m };

    let mut score = vec![f64::NEG_INFINITY; N_STATES];
    score[0] = 0.0;
    let mut next = vec![f64::NEG_INFINITY; N_STATES];
    // survivor bit per (step, next state): the oldest register bit of the predecessor
    let mut survivors = vec![0u64; steps];
    for t in 0..steps {
        let (ma, mb) = (mother[2 * t], mother[2 * t + 1]);
        next.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        let inputs: &[u8] = if t >= n_bits { &[0] } else { &[0, 1] };
        for s in 0..N_STATES {
            if score[s] == f64::NEG_INFINITY {
                continue;
            }
            for &b in inputs {
                let (a, c, ns) = table[2 * s + b as usize];
                let cand = score[s] + signed(ma, a) + signed(mb, c);
                if cand > next[ns] {
                    next[ns] = cand;
                    if s & 1 == 1 {
                        survivors[t] |= 1 << ns;
                    } else {
                        survivors[t] &= !(1 << ns);
                    }
                }
            }
        }
        std::mem::swap(&mut score, &mut next);
    }

    let mut state = 0usize;
    let mut bits = vec![0u8; steps];
    for t in (0..steps).rev() {
        bits[t] = (state >> (TAIL_BITS - 1)) as u8 & 1;
        let lsb = ((survivors[t] >> state) & 1) as usize;
        state = ((state << 1) | lsb) & (N_STATES - 1);
    }
    bits.truncate(n_bits);
    Ok(bits)
}

/// Two-permutation block interleaver over the coded bits of one OFDM symbol.
///
/// The first permutation writes row-wise into `n_col` columns and reads
/// column-wise, so adjacent coded bits land on distant subcarriers; the
/// second rotates bits within groups of `s = max(n_bpsc / 2, 1)` so they
/// alternate between more and less reliable label positions. `n_col` is the
/// value closest to 16 that splits `n_cbps` into columns whose length is a
/// multiple of `s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    n_cbps: usize,
    perm: Vec<usize>,
}

impl Interleaver {
    pub fn new(n_cbps: usize, n_bpsc: usize) -> Result<Self> {
        let s = (n_bpsc / 2).max(1);
        if n_cbps == 0 || !n_cbps.is_multiple_of(s) {
            return Err(Error::LengthNotMultiple { len: n_cbps, multiple: s });
        }
        let n_col = (1..=n_cbps / s)
            .filter(|d| (n_cbps / s).is_multiple_of(*d))
            .min_by_key(|&d| (d.abs_diff(16), usize::MAX - d))
            .expect("n_cbps >= 1");
        let rows = n_cbps / n_col;
        let perm: Vec<usize> = (0..n_cbps)
            .map(|k| {
                let i = rows * (k % n_col) + k / n_col;
                s * (i / s) + (i + n_cbps - n_col * i / n_cbps) % s
            })
            .collect();
        let mut seen = vec![false; n_cbps];
        for &j in &perm {
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidParameter(format!(
                    "no valid interleaver for {n_cbps} coded bits per symbol"
                )));
            }
        }
        Ok(Interleaver { n_cbps, perm })
    }

    pub fn depth(&self) -> usize {
        self.n_cbps
    }

    /// Output position of input bit `k`.
    pub fn position(&self, k: usize) -> usize {
        self.perm[k]
    }

    pub fn interleave<T: Copy + Default>(&self, bits: &[T]) -> Result<Vec<T>> {
        self.check(bits.len())?;
        let mut out = vec![T::default(); self.n_cbps];
        for (k, &b) in bits.iter().enumerate() {
            out[self.perm[k]] = b;
        }
        Ok(out)
    }

    pub fn deinterleave<T: Copy>(&self, bits: &[T]) -> Result<Vec<T>> {
        self.check(bits.len())?;
        Ok(self.perm.iter().map(|&j| bits[j]).collect())
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n_cbps {
            return Err(Error::LengthMismatch { expected: self.n_cbps, got: len });
        }
        Ok(())
    }
}

/// How a payload fills whole OFDM symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketLayout {
    pub payload_bits: usize,
    pub rate: CodeRate,
    pub n_cbps: usize,
    pub n_dbps: usize,
    pub n_sym: usize,
    /// Zero bits between payload and tail.
    pub pad_bits: usize,
}

impl PacketLayout {
    pub fn new(payload_bits: usize, n_cbps: usize, rate: CodeRate) -> Result<Self> {
        let n_dbps = rate.data_bits(n_cbps)?;
        let tail = if rate == CodeRate::Uncoded { 0 } else { TAIL_BITS };
        if n_dbps <= tail {
            return Err(Error::InvalidParameter(format!(
                "{n_cbps} coded bits per symbol cannot carry the code tail"
            )));
        }
        let n_sym = (payload_bits + tail).div_ceil(n_dbps);
        Ok(PacketLayout {
            payload_bits,
            rate,
            n_cbps,
            n_dbps,
            n_sym,
            pad_bits: n_sym * n_dbps - payload_bits - tail,
        })
    }

    /// Payload plus padding: the bits handed to [`encode`].
    pub fn info_bits(&self) -> usize {
        self.payload_bits + self.pad_bits
    }

    pub fn coded_bits(&self) -> usize {
        self.n_sym * self.n_cbps
    }
}
