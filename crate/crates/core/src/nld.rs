//! Frequency-domain description of a memoryless polynomial PA acting on an
//! OFDM symbol.
//!
//! For subcarrier symbols `S_0..S_{N-1}` the order-`p` term of the PA output,
//! seen after demodulation, is the in-band part of
//!
//! ```text
//! d^(p)_k = sum_{n_1 + .. + n_q - m_1 - .. - m_r = k} S_{n_1}..S_{n_q} S*_{m_1}..S*_{m_r}
//! ```
//!
//! with `q = (p+1)/2`, `r = (p-1)/2`. Part of each `d^(p)_k` is a scaled copy
//! of `S_k` (the replica terms, total weight `T^(p)_k`); the remainder is the
//! distortion that is uncorrelated with the data. The PA is described by the
//! normalized coefficients `c_p = beta_p / alpha`, where
//! `alpha = beta_1 + sum_p beta_p T^(p)` is the Bussgang gain.

use num_complex::Complex64;
use rand::Rng;

use crate::constellation::Constellation;
use crate::dsp::{fft_in_place, ifft_in_place_unnormalized, ComplexVec, RngStream};
use crate::ofdm::SubcarrierLayout;
use crate::pa::{PaPolynomial, MAX_ORDER};
use crate::{Error, Result};

/// Trials used for numerically estimated replica energies (orders 7 and 9).
pub const NUMERIC_T_TRIALS: usize = 2000;
const NUMERIC_T_SEED: u64 = 0x7e_5eed;

fn check_order(p: usize) -> Result<()> {
    if p.is_multiple_of(2) || !(3..=MAX_ORDER).contains(&p) {
        return Err(Error::UnsupportedOrder {
            order: p,
            reason: "distortion orders are odd and between 3 and 9",
        });
    }
    Ok(())
}

/// `d^(3), d^(5), .., d^(p_max)` for a contiguous band, via one zero-padded
/// inverse transform and one forward transform per order.
fn distortion_terms(span: &[Complex64], p_max: usize) -> Vec<ComplexVec> {
    let n = span.len();
    if p_max < 3 {
        return Vec::new();
    }
    let len = (p_max * (n - 1) + 1).next_power_of_two();
    let mut a = vec![Complex64::new(0.0, 0.0); len];
    a[..n].copy_from_slice(span);
    ifft_in_place_unnormalized(&mut a);
    let mag2: Vec<f64> = a.iter().map(|v| v.norm_sqr()).collect();
    let scale = 1.0 / len as f64;
    let mut prod = a.clone();
    (3..=p_max)
        .step_by(2)
        .map(|_| {
            for (x, m) in prod.iter_mut().zip(&mag2) {
                *x *= *m;
            }
            let mut buf = prod.clone();
            fft_in_place(&mut buf);
            buf.truncate(n);
            buf.iter_mut().for_each(|v| *v *= scale);
            buf
        })
        .collect()
}

/// `d^(p)` for symbols on contiguous subcarriers `0..N`.
pub fn compute_dp(s: &[Complex64], p: usize) -> Result<ComplexVec> {
    check_order(p)?;
    Ok(distortion_terms(s, p).pop().expect("p >= 3"))
}

/// `d^(p)` on the active subcarriers of `layout`; unused bins inside the
/// band are treated as zero.
pub fn compute_dp_layout(s: &[Complex64], layout: &SubcarrierLayout, p: usize) -> Result<ComplexVec> {
    check_order(p)?;
    let span = layout.expand(s);
    Ok(layout.extract(&distortion_terms(&span, p).pop().expect("p >= 3")))
}

/// In-band PA output `beta_1 S + sum_p beta_p d^(p)(S)`; out-of-band
/// products are discarded.
pub fn apply_pa_frequency_domain(
    s: &[Complex64],
    layout: &SubcarrierLayout,
    pa: &PaPolynomial,
) -> ComplexVec {
    let span = layout.expand(s);
    let mut out: ComplexVec = span.iter().map(|v| v * pa.beta(1)).collect();
    for (i, d) in distortion_terms(&span, pa.p_max()).iter().enumerate() {
        let b = pa.beta(2 * i + 3);
        for (o, v) in out.iter_mut().zip(d) {
            *o += b * v;
        }
    }
    layout.extract(&out)
}

/// Per-subcarrier replica energy `T^(p)_k` for `p` in {3, 5}.
pub fn compute_tk(s: &[Complex64], p: usize) -> Result<Vec<f64>> {
    let e: Vec<f64> = s.iter().map(|v| v.norm_sqr()).collect();
    let sum2: f64 = e.iter().sum();
    match p {
        3 => Ok(e.iter().map(|ek| 2.0 * sum2 - ek).collect()),
        5 => {
            let sum4: f64 = e.iter().map(|x| x * x).sum();
            Ok(e
                .iter()
                .map(|ek| 6.0 * sum2 * sum2 - 6.0 * sum2 * ek - 3.0 * sum4 + 4.0 * ek * ek)
                .collect())
        }
        _ => Err(Error::UnsupportedOrder {
            order: p,
            reason: "closed-form replica energy exists for orders 3 and 5 only",
        }),
    }
}

/// Expected replica energy `T^(p)` for `N` independent, equiprobable symbols.
pub fn compute_t_avg(n: usize, con: &Constellation, p: usize) -> Result<f64> {
    let n = n as f64;
    let (e2, e4) = (con.e2(), con.e4());
    match p {
        3 => Ok((2.0 * n - 1.0) * e2),
        5 => Ok(6.0 * n * (n - 1.0) * e2 * e2 - (3.0 * n - 4.0) * e4),
        _ => Err(Error::UnsupportedOrder {
            order: p,
            reason: "closed-form replica energy exists for orders 3 and 5 only",
        }),
    }
}

/// Monte Carlo replica energy: `sum Re<d^(p), S> / sum <S, S>` over random
/// symbols, i.e. the regression gain of `d^(p)` onto `S`.
pub fn estimate_tp_numeric<R: Rng + ?Sized>(
    n: usize,
    con: &Constellation,
    p: usize,
    n_trials: usize,
    rng: &mut R,
) -> Result<f64> {
    check_order(p)?;
    let (mut num, mut den) = (0.0, 0.0);
    for _ in 0..n_trials {
        let s = con.random_symbols(n, rng);
        let d = compute_dp(&s, p)?;
        num += d.iter().zip(&s).map(|(a, b)| (a * b.conj()).re).sum::<f64>();
        den += s.iter().map(|v| v.norm_sqr()).sum::<f64>();
    }
    Ok(num / den)
}

/// Averaged replica energies `T^(3), .., T^(p_max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TTable {
    values: Vec<f64>,
}

impl TTable {
    pub fn from_values(values: Vec<f64>) -> Self {
        TTable { values }
    }

    /// Closed forms; orders up to 5 only.
    pub fn closed_form(n: usize, con: &Constellation, p_max: usize) -> Result<Self> {
        let values = (3..=p_max)
            .step_by(2)
            .map(|p| compute_t_avg(n, con, p))
            .collect::<Result<_>>()?;
        Ok(TTable { values })
    }

    /// Closed forms up to order 5, reproducible Monte Carlo estimates above.
    pub fn for_constellation(n: usize, con: &Constellation, p_max: usize) -> Result<Self> {
        if p_max > 1 {
            check_order(p_max)?;
        }
        let mut rng = RngStream::new(NUMERIC_T_SEED, n as u64).rng();
        let values = (3..=p_max)
            .step_by(2)
            .map(|p| {
                if p <= 5 {
                    compute_t_avg(n, con, p)
                } else {
                    estimate_tp_numeric(n, con, p, NUMERIC_T_TRIALS, &mut rng)
                }
            })
            .collect::<Result<_>>()?;
        Ok(TTable { values })
    }

    pub fn p_max(&self) -> usize {
        2 * self.values.len() + 1
    }

    pub fn get(&self, p: usize) -> f64 {
        self.values[(p - 3) / 2]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Bussgang gain `beta_1 + sum_p beta_p T^(p)`.
pub fn alpha_with_table(pa: &PaPolynomial, t: &TTable) -> Complex64 {
    let mut alpha = pa.beta(1);
    for p in (3..=pa.p_max().min(t.p_max())).step_by(2) {
        alpha += pa.beta(p) * t.get(p);
    }
    alpha
}

pub fn alpha_from_betas(pa: &PaPolynomial, n: usize, con: &Constellation) -> Result<Complex64> {
    let t = TTable::for_constellation(n, con, pa.p_max())?;
    Ok(alpha_with_table(pa, &t))
}

/// Per-subcarrier gain `beta_1 + beta_3 T^(3)_k + beta_5 T^(5)_k`; order 5 at most.
pub fn alpha_k(pa: &PaPolynomial, s: &[Complex64]) -> Result<ComplexVec> {
    if pa.p_max() > 5 {
        return Err(Error::UnsupportedOrder {
            order: pa.p_max(),
            reason: "per-subcarrier gain needs closed-form replica energies",
        });
    }
    let mut alpha = vec![pa.beta(1); s.len()];
    for p in (3..=pa.p_max()).step_by(2) {
        for (a, t) in alpha.iter_mut().zip(compute_tk(s, p)?) {
            *a += pa.beta(p) * t;
        }
    }
    Ok(alpha)
}

/// `[c_3, c_5, .., c_P]`; `c_1` is implied by the replica energies.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCoeffs {
    c: ComplexVec,
}

impl NormalizedCoeffs {
    pub fn new(c: ComplexVec) -> Self {
        NormalizedCoeffs { c }
    }

    pub fn zeros(p_max: usize) -> Self {
        NormalizedCoeffs { c: vec![Complex64::new(0.0, 0.0); p_max.saturating_sub(1) / 2] }
    }

    pub fn p_max(&self) -> usize {
        2 * self.c.len() + 1
    }

    pub fn get(&self, p: usize) -> Complex64 {
        self.c[(p - 3) / 2]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.c
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(|v| v.norm() == 0.0)
    }

    /// `a * self + (1 - a) * other`.
    pub fn blend(&self, other: &NormalizedCoeffs, a: f64) -> NormalizedCoeffs {
        NormalizedCoeffs {
            c: self.c.iter().zip(&other.c).map(|(x, y)| x * a + y * (1.0 - a)).collect(),
        }
    }
}

/// `c_p = beta_p / alpha`.
pub fn c_from_betas(pa: &PaPolynomial, alpha: Complex64) -> Result<NormalizedCoeffs> {
    if alpha.norm() == 0.0 {
        return Err(Error::ZeroGain);
    }
    Ok(NormalizedCoeffs { c: pa.betas()[1..].iter().map(|b| b / alpha).collect() })
}

/// `c_1 = 1 - sum_p c_p T^(p)`.
pub fn c1_from_c(c: &NormalizedCoeffs, t: &TTable) -> Complex64 {
    let mut c1 = Complex64::new(1.0, 0.0);
    for p in (3..=c.p_max()).step_by(2) {
        c1 -= c.get(p) * t.get(p);
    }
    c1
}

/// Distortion bases of one symbol with the replica energies used to
/// separate them from the data.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionBasis {
    d: Vec<ComplexVec>,
    t_avg: TTable,
    t_k: Option<Vec<Vec<f64>>>,
}

impl DistortionBasis {
    /// Computes `d^(3) .. d^(P)` for the active symbols `s`, `P = t.p_max()`.
    pub fn new(s: &[Complex64], layout: &SubcarrierLayout, t: &TTable) -> Self {
        let span = layout.expand(s);
        let d = distortion_terms(&span, t.p_max())
            .iter()
            .map(|v| layout.extract(v))
            .collect();
        DistortionBasis { d, t_avg: t.clone(), t_k: None }
    }

    /// Also keeps the per-subcarrier replica energies (orders up to 5).
    pub fn with_per_subcarrier(mut self, s: &[Complex64]) -> Result<Self> {
        self.t_k = Some(
            (3..=self.p_max())
                .step_by(2)
                .map(|p| compute_tk(s, p))
                .collect::<Result<_>>()?,
        );
        Ok(self)
    }

    pub fn p_max(&self) -> usize {
        2 * self.d.len() + 1
    }

    pub fn d(&self, p: usize) -> &[Complex64] {
        &self.d[(p - 3) / 2]
    }

    pub fn t_avg(&self) -> &TTable {
        &self.t_avg
    }

    pub fn t_k(&self, p: usize) -> Option<&[f64]> {
        self.t_k.as_ref().map(|t| t[(p - 3) / 2].as_slice())
    }

    /// `d^(p) - T^(p) S`.
    pub fn residual(&self, p: usize, s: &[Complex64]) -> ComplexVec {
        let t = self.t_avg.get(p);
        self.d(p).iter().zip(s).map(|(d, s)| d - s * t).collect()
    }

    /// Residuals for every order, in order 3, 5, ...
    pub fn residuals(&self, s: &[Complex64]) -> Vec<ComplexVec> {
        (3..=self.p_max()).step_by(2).map(|p| self.residual(p, s)).collect()
    }
}

/// `sum_p c_p (d^(p) - T^(p) S)` with the averaged replica energies.
pub fn reconstruct_distortion(
    s: &[Complex64],
    c: &NormalizedCoeffs,
    basis: &DistortionBasis,
) -> ComplexVec {
    let mut out = vec![Complex64::new(0.0, 0.0); s.len()];
    for p in (3..=c.p_max().min(basis.p_max())).step_by(2) {
        let (cp, t) = (c.get(p), basis.t_avg.get(p));
        for ((o, d), s) in out.iter_mut().zip(basis.d(p)).zip(s) {
            *o += cp * (d - s * t);
        }
    }
    out
}

/// `sum_p c_p (d^(p)_k - T^(p)_k S_k)` with the per-subcarrier replica
/// energies; the basis must have been built with them.
pub fn reconstruct_distortion_per_subcarrier(
    s: &[Complex64],
    c: &NormalizedCoeffs,
    basis: &DistortionBasis,
) -> Result<ComplexVec> {
    let mut out = vec![Complex64::new(0.0, 0.0); s.len()];
    for p in (3..=c.p_max().min(basis.p_max())).step_by(2) {
        let tk = basis
            .t_k(p)
            .ok_or_else(|| Error::InvalidParameter("basis has no per-subcarrier energies".into()))?;
        let cp = c.get(p);
        for (((o, d), s), t) in out.iter_mut().zip(basis.d(p)).zip(s).zip(tk) {
            *o += cp * (d - s * t);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::complex_gaussian;
    use crate::ofdm::{demodulate, modulate, OfdmConfig};
    use crate::pa::apply_polynomial;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Direct multi-index sum over `n_1 + .. + n_q - m_1 - .. - m_r = k`.
    fn direct_dp(s: &[Complex64], p: usize) -> ComplexVec {
        let n = s.len() as i64;
        let (q, r) = (p.div_ceil(2), (p - 1) / 2);
        let mut out = vec![c(0.0, 0.0); s.len()];
        let free = p - 1;
        let total = (n as usize).pow(free as u32);
        let mut idx = vec![0i64; free];
        for k in 0..n {
            for code in 0..total {
                let mut rest = code;
                for slot in idx.iter_mut() {
                    *slot = (rest % n as usize) as i64;
                    rest /= n as usize;
                }
                // last conjugated index is fixed by the constraint
                let plus: i64 = idx[..q].iter().sum();
                let minus: i64 = idx[q..].iter().sum();
                let last = plus - minus - k;
                if !(0..n).contains(&last) {
                    continue;
                }
                let mut term = c(1.0, 0.0);
                for &i in &idx[..q] {
                    term *= s[i as usize];
                }
                for &i in idx[q..].iter().chain(std::iter::once(&last)) {
                    term *= s[i as usize].conj();
                }
                debug_assert_eq!(idx[q..].len() + 1, r);
                out[k as usize] += term;
            }
        }
        out
    }

    fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den.max(1e-300)).sqrt()
    }

    fn qam16() -> Constellation {
        Constellation::qam(16).unwrap()
    }

    #[test]
    fn two_ones_third_order() {
        let s = [c(1.0, 0.0), c(1.0, 0.0)];
        assert_eq!(compute_dp(&s, 3).unwrap(), direct_dp(&s, 3));
        for v in compute_dp(&s, 3).unwrap() {
            assert!((v - c(3.0, 0.0)).norm() < 1e-12);
        }
        assert_eq!(compute_tk(&s, 3).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn single_tone_only_self_product() {
        let a = c(0.7, -1.3);
        let mut s = vec![c(0.0, 0.0); 9];
        s[4] = a;
        let d = compute_dp(&s, 3).unwrap();
        for (k, v) in d.iter().enumerate() {
            let want = if k == 4 { a * a.norm_sqr() } else { c(0.0, 0.0) };
            assert!((v - want).norm() < 1e-12);
        }
    }

    #[test]
    fn fast_matches_direct_sum() {
        let mut rng = RngStream::new(11, 0).rng();
        for n in [1usize, 2, 3, 5, 8, 13, 16] {
            let s = qam16().random_symbols(n, &mut rng);
            for p in [3usize, 5] {
                let e = rel_err(&compute_dp(&s, p).unwrap(), &direct_dp(&s, p));
                assert!(e < 1e-9, "n={n} p={p} err={e}");
            }
        }
        let s = qam16().random_symbols(5, &mut rng);
        for p in [7usize, 9] {
            assert!(rel_err(&compute_dp(&s, p).unwrap(), &direct_dp(&s, p)) < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_orders() {
        let s = [c(1.0, 0.0)];
        for p in [1usize, 2, 4, 11] {
            assert!(matches!(compute_dp(&s, p), Err(Error::UnsupportedOrder { .. })));
        }
        assert!(compute_tk(&s, 7).is_err());
        assert!(compute_t_avg(4, &qam16(), 7).is_err());
    }

    /// Replica terms of `d^(p)_k`: the conjugated indices pair off with
    /// distinct non-conjugated ones and the unpaired index equals `k`.
    fn replica_sum(s: &[Complex64], p: usize, k: usize) -> Complex64 {
        let n = s.len();
        let (q, r) = (p.div_ceil(2), (p - 1) / 2);
        let mut acc = c(0.0, 0.0);
        let mut idx = vec![0usize; p];
        for code in 0..n.pow(p as u32) {
            let mut rest = code;
            for slot in idx.iter_mut() {
                *slot = rest % n;
                rest /= n;
            }
            let (pos, neg) = idx.split_at(q);
            if pos.iter().sum::<usize>() as i64 - neg.iter().sum::<usize>() as i64 != k as i64 {
                continue;
            }
            let replica = (0..q).any(|free| {
                pos[free] == k && {
                    let others: Vec<usize> = (0..q).filter(|&i| i != free).map(|i| pos[i]).collect();
                    let mut want = neg.to_vec();
                    let mut got = others;
                    want.sort();
                    got.sort();
                    want == got
                }
            });
            debug_assert_eq!(neg.len(), r);
            if replica {
                let mut term = c(1.0, 0.0);
                for &i in pos {
                    term *= s[i];
                }
                for &i in neg {
                    term *= s[i].conj();
                }
                acc += term;
            }
        }
        acc
    }

    #[test]
    fn replica_energy_matches_enumeration() {
        let mut rng = RngStream::new(12, 0).rng();
        for n in [2usize, 3, 4] {
            let s = qam16().random_symbols(n, &mut rng);
            for p in [3usize, 5] {
                let tk = compute_tk(&s, p).unwrap();
                for k in 0..n {
                    let want = replica_sum(&s, p, k);
                    assert!((s[k] * tk[k] - want).norm() <= 1e-10 * want.norm(), "n={n} p={p}");
                }
            }
        }
    }

    #[test]
    fn unit_modulus_third_order_is_constant() {
        let mut rng = RngStream::new(13, 0).rng();
        let psk = Constellation::psk(8).unwrap();
        let s = psk.random_symbols(37, &mut rng);
        for t in compute_tk(&s, 3).unwrap() {
            assert!((t - 73.0).abs() < 1e-9);
        }
    }

    #[test]
    fn averaged_energies() {
        let psk = Constellation::psk(4).unwrap();
        assert_eq!(compute_t_avg(120, &psk, 3).unwrap(), 239.0);
        assert_eq!(compute_t_avg(8, &qam16(), 3).unwrap(), 150.0);
        assert_eq!(compute_t_avg(8, &qam16(), 5).unwrap(), 30960.0);

        let mut rng = RngStream::new(14, 0).rng();
        let n = 256;
        for p in [3usize, 5] {
            let mut acc = 0.0;
            let trials = 200;
            for _ in 0..trials {
                let s = qam16().random_symbols(n, &mut rng);
                acc += compute_tk(&s, p).unwrap().iter().sum::<f64>() / n as f64;
            }
            let mean = acc / trials as f64;
            let want = compute_t_avg(n, &qam16(), p).unwrap();
            assert!((mean / want - 1.0).abs() < 0.01, "p={p}");
        }
    }

    #[test]
    fn numeric_energies_match_closed_form() {
        let mut rng = RngStream::new(15, 0).rng();
        for con in [Constellation::qam(16).unwrap(), Constellation::psk(4).unwrap()] {
            for p in [3usize, 5] {
                let got = estimate_tp_numeric(64, &con, p, 2000, &mut rng).unwrap();
                let want = compute_t_avg(64, &con, p).unwrap();
                assert!((got / want - 1.0).abs() < 0.02, "p={p} got={got} want={want}");
            }
        }
        let a = estimate_tp_numeric(16, &qam16(), 7, 50, &mut RngStream::new(1, 2).rng()).unwrap();
        let b = estimate_tp_numeric(16, &qam16(), 7, 50, &mut RngStream::new(1, 2).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frequency_domain_pa_examples() {
        let s = [c(1.0, 0.0), c(1.0, 0.0)];
        let layout = SubcarrierLayout::contiguous(2);
        let id = PaPolynomial::from_real(&[1.0]).unwrap();
        assert_eq!(apply_pa_frequency_domain(&s, &layout, &id), s.to_vec());
        let b3 = c(-0.05, 0.02);
        let pa = PaPolynomial::new(vec![c(1.0, 0.0), b3]).unwrap();
        for v in apply_pa_frequency_domain(&s, &layout, &pa) {
            assert!((v - (c(1.0, 0.0) + b3 * 3.0)).norm() < 1e-12);
        }
    }

    fn time_domain_equivalence(cfg: &OfdmConfig, seed: u64) -> f64 {
        let mut rng = RngStream::new(seed, 0).rng();
        let s: ComplexVec = (0..cfg.n_active()).map(|_| complex_gaussian(&mut rng, 2.0)).collect();
        let g = cfg.sample_gain();
        // time-domain coefficients chosen for envelopes of order 1
        let pa_time = PaPolynomial::new(vec![c(1.0, 0.02), c(-0.12, 0.03), c(0.01, -0.004)]).unwrap();
        let y = apply_polynomial(&modulate(&s, cfg), &pa_time);
        let via_time = demodulate(&y, cfg).unwrap();
        let via_freq = apply_pa_frequency_domain(&s, &cfg.layout, &pa_time.rescaled_input(g));
        rel_err(&via_freq, &via_time)
    }

    #[test]
    fn matches_time_domain_pa() {
        let contiguous = OfdmConfig::with_layout(SubcarrierLayout::centered(16, false), 32, 8, 4)
            .unwrap()
            .with_unit_power(2.0);
        assert!(time_domain_equivalence(&contiguous, 1) < 1e-9);
        assert!(time_domain_equivalence(&OfdmConfig::legacy52(4).with_unit_power(2.0), 2) < 1e-9);
        assert!(time_domain_equivalence(&OfdmConfig::n120(4).with_unit_power(2.0), 3) < 1e-9);
    }

    #[test]
    fn alpha_and_normalization() {
        let psk = Constellation::psk(4).unwrap();
        assert_eq!(alpha_from_betas(&PaPolynomial::from_real(&[1.0]).unwrap(), 64, &psk).unwrap(), c(1.0, 0.0));
        let b3 = c(-1e-3, 2e-4);
        let pa = PaPolynomial::new(vec![c(1.0, 0.0), b3]).unwrap();
        assert!((alpha_from_betas(&pa, 120, &psk).unwrap() - (c(1.0, 0.0) + b3 * 239.0)).norm() < 1e-15);

        let pa = PaPolynomial::new(vec![c(2.0, 0.0), c(0.2, 0.0)]).unwrap();
        let alpha = c(2.5, 0.1);
        let cc = c_from_betas(&pa, alpha).unwrap();
        assert!((cc.get(3) - c(0.2, 0.0) / alpha).norm() < 1e-15);
        assert_eq!(c_from_betas(&pa, c(0.0, 0.0)), Err(Error::ZeroGain));

        let t = TTable::closed_form(64, &psk, 5).unwrap();
        assert_eq!(c1_from_c(&NormalizedCoeffs::zeros(5), &t), c(1.0, 0.0));
        let pa = PaPolynomial::new(vec![c(0.9, 0.1), c(-2e-3, 1e-4), c(1e-6, -2e-7)]).unwrap();
        let alpha = alpha_with_table(&pa, &t);
        let cc = c_from_betas(&pa, alpha).unwrap();
        assert!((pa.beta(1) / alpha - c1_from_c(&cc, &t)).norm() < 1e-10);
    }

    #[test]
    fn empirical_bussgang_gain() {
        let psk = Constellation::psk(4).unwrap();
        let n = 256;
        let layout = SubcarrierLayout::contiguous(n);
        let pa = PaPolynomial::new(vec![c(1.0, 0.0), c(-4e-4, 1e-4), c(2e-7, 0.0)]).unwrap();
        let alpha = alpha_from_betas(&pa, n, &psk).unwrap();
        let mut rng = RngStream::new(16, 0).rng();
        let (mut num, mut den) = (c(0.0, 0.0), 0.0);
        for _ in 0..1000 {
            let s = psk.random_symbols(n, &mut rng);
            let y = apply_pa_frequency_domain(&s, &layout, &pa);
            num += y.iter().zip(&s).map(|(a, b)| a * b.conj()).sum::<Complex64>();
            den += s.iter().map(|v| v.norm_sqr()).sum::<f64>();
        }
        let emp = num / den;
        assert!((emp - alpha).norm() / alpha.norm() < 0.01);
    }

    #[test]
    fn appendix_identity_per_subcarrier() {
        let mut rng = RngStream::new(17, 0).rng();
        for n in [2usize, 5, 8] {
            let s = qam16().random_symbols(n, &mut rng);
            let layout = SubcarrierLayout::contiguous(n);
            let pa = PaPolynomial::new(vec![c(1.0, 0.1), c(-3e-3, 1e-3), c(4e-6, -1e-6)]).unwrap();
            let y = apply_pa_frequency_domain(&s, &layout, &pa);
            let ak = alpha_k(&pa, &s).unwrap();
            let t3 = compute_tk(&s, 3).unwrap();
            let t5 = compute_tk(&s, 5).unwrap();
            let d3 = direct_dp(&s, 3);
            let d5 = direct_dp(&s, 5);
            for k in 0..n {
                let lhs = y[k] - ak[k] * s[k];
                let rhs = pa.beta(3) * (d3[k] - s[k] * t3[k]) + pa.beta(5) * (d5[k] - s[k] * t5[k]);
                assert!((lhs - rhs).norm() <= 1e-10 * y[k].norm());
            }
        }
    }

    #[test]
    fn reconstruction_examples() {
        let s = [c(1.0, 0.0), c(1.0, 0.0)];
        let layout = SubcarrierLayout::contiguous(2);
        let psk = Constellation::psk(4).unwrap();
        let t = TTable::closed_form(2, &psk, 3).unwrap();
        let basis = DistortionBasis::new(&s, &layout, &t).with_per_subcarrier(&s).unwrap();
        assert!(reconstruct_distortion(&s, &NormalizedCoeffs::zeros(3), &basis).iter().all(|v| v.norm() == 0.0));
        let cc = NormalizedCoeffs::new(vec![c(0.3, -0.7)]);
        for v in reconstruct_distortion_per_subcarrier(&s, &cc, &basis).unwrap() {
            assert!(v.norm() < 1e-12);
        }
        let plain = DistortionBasis::new(&s, &layout, &t);
        assert!(reconstruct_distortion_per_subcarrier(&s, &cc, &plain).is_err());
    }

    #[test]
    fn distortion_uncorrelated_with_data() {
        let qpsk = Constellation::qam(4).unwrap();
        let n = 1024;
        let layout = SubcarrierLayout::contiguous(n);
        let t = TTable::closed_form(n, &qpsk, 5).unwrap();
        let cc = NormalizedCoeffs::new(vec![c(-1e-4, 2e-5), c(1e-8, 0.0)]);
        let mut rng = RngStream::new(18, 0).rng();
        let (mut ip, mut ed, mut es) = (c(0.0, 0.0), 0.0, 0.0);
        for _ in 0..1000 {
            let s = qpsk.random_symbols(n, &mut rng);
            let basis = DistortionBasis::new(&s, &layout, &t);
            let d = reconstruct_distortion(&s, &cc, &basis);
            ip += d.iter().zip(&s).map(|(a, b)| a * b.conj()).sum::<Complex64>();
            ed += d.iter().map(|v| v.norm_sqr()).sum::<f64>();
            es += s.iter().map(|v| v.norm_sqr()).sum::<f64>();
        }
        assert!(ip.norm() / (ed * es).sqrt() < 0.02);
    }

    #[test]
    fn layout_basis_matches_span_computation() {
        let layout = SubcarrierLayout::centered(10, true);
        let mut rng = RngStream::new(19, 0).rng();
        let s = qam16().random_symbols(10, &mut rng);
        let span = layout.expand(&s);
        for p in [3usize, 5] {
            let want = layout.extract(&direct_dp(&span, p));
            assert!(rel_err(&compute_dp_layout(&s, &layout, p).unwrap(), &want) < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn scaling_homogeneity(seed in 0u64..1000, n in 1usize..24, scale in 0.1f64..5.0) {
            let mut rng = RngStream::new(seed, 0).rng();
            let s = qam16().random_symbols(n, &mut rng);
            let scaled: ComplexVec = s.iter().map(|v| v * scale).collect();
            for p in [3usize, 5] {
                let d = compute_dp(&s, p).unwrap();
                let ds = compute_dp(&scaled, p).unwrap();
                let want: ComplexVec = d.iter().map(|v| v * scale.powi(p as i32)).collect();
                prop_assert!(rel_err(&ds, &want) < 1e-9);
            }
        }

        #[test]
        fn phase_rotation_covariance(seed in 0u64..1000, n in 1usize..24, theta in 0.0f64..6.3) {
            let mut rng = RngStream::new(seed, 1).rng();
            let s = qam16().random_symbols(n, &mut rng);
            let rot = Complex64::from_polar(1.0, theta);
            let rs: ComplexVec = s.iter().map(|v| v * rot).collect();
            let d = compute_dp(&s, 5).unwrap();
            let dr = compute_dp(&rs, 5).unwrap();
            let want: ComplexVec = d.iter().map(|v| v * rot).collect();
            prop_assert!(rel_err(&dr, &want) < 1e-9);
        }
    }
}
