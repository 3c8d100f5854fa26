//! Memoryless power-amplifier models.
//!
//! Two descriptions are supported: Rapp's AM/AM curve (no AM/PM) and the odd
//! complex power series `y = sum_p beta_p z |z|^(p-1)`, p = 1, 3, ..., P.
//! Output back-off is evaluated against a complex Gaussian input, i.e. a
//! Rayleigh-distributed envelope, which is what a many-subcarrier OFDM
//! signal looks like sample by sample.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{lstsq_small, CMatrix, ComplexVec};
use crate::{Error, Result};

/// Highest supported polynomial order.
pub const MAX_ORDER: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RappParams {
    /// Output saturation amplitude.
    pub a_sat: f64,
    /// Smoothness factor.
    pub v: f64,
}

impl RappParams {
    pub fn new(a_sat: f64, v: f64) -> Result<Self> {
        if !(a_sat > 0.0 && v > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Rapp model needs a_sat > 0 and v > 0, got a_sat={a_sat}, v={v}"
            )));
        }
        Ok(RappParams { a_sat, v })
    }
}

/// `rho * (1 + (rho / a_sat)^v)^(-1/v)`.
pub fn rapp_amam(rho: f64, p: &RappParams) -> f64 {
    rho * (1.0 + (rho / p.a_sat).powf(p.v)).powf(-1.0 / p.v)
}

/// Odd-order baseband power series.
#[derive(Debug, Clone, PartialEq)]
pub struct PaPolynomial {
    /// `beta_1, beta_3, ..., beta_P`.
    betas: Vec<Complex64>,
}

impl PaPolynomial {
    pub fn new(betas: Vec<Complex64>) -> Result<Self> {
        if betas.is_empty() || 2 * betas.len() - 1 > MAX_ORDER {
            return Err(Error::UnsupportedOrder {
                order: 2 * betas.len().max(1) - 1,
                reason: "polynomial order must be odd and at most 9",
            });
        }
        if betas[0] == Complex64::new(0.0, 0.0) {
            return Err(Error::InvalidParameter("beta_1 must be nonzero".into()));
        }
        Ok(PaPolynomial { betas })
    }

    pub fn from_real(betas: &[f64]) -> Result<Self> {
        Self::new(betas.iter().map(|&b| Complex64::new(b, 0.0)).collect())
    }

    pub fn betas(&self) -> &[Complex64] {
        &self.betas
    }

    /// Highest odd order `P`.
    pub fn p_max(&self) -> usize {
        2 * self.betas.len() - 1
    }

    pub fn beta(&self, p: usize) -> Complex64 {
        if p % 2 == 1 && p <= self.p_max() {
            self.betas[(p - 1) / 2]
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    /// Complex gain `y / z` at envelope `rho`.
    pub fn gain(&self, rho: f64) -> Complex64 {
        let r2 = rho * rho;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut pow = 1.0;
        for b in &self.betas {
            acc += b * pow;
            pow *= r2;
        }
        acc
    }

    pub fn amam(&self, rho: f64) -> f64 {
        (self.gain(rho) * rho).norm()
    }

    pub fn ampm(&self, rho: f64) -> f64 {
        self.gain(rho).arg()
    }

    /// The same amplifier seen through an input scaled by `g`:
    /// `beta_p -> beta_p g^(p-1)`.
    pub fn rescaled_input(&self, g: f64) -> Self {
        let g2 = g * g;
        let mut pow = 1.0;
        let betas = self
            .betas
            .iter()
            .map(|b| {
                let v = b * pow;
                pow *= g2;
                v
            })
            .collect();
        PaPolynomial { betas }
    }

    pub fn is_linear(&self) -> bool {
        self.betas[1..].iter().all(|b| b.norm() == 0.0)
    }
}

/// Any of the supported amplifier descriptions.
#[derive(Debug, Clone, PartialEq)]
pub enum PaModel {
    Linear,
    Rapp(RappParams),
    Polynomial(PaPolynomial),
}

impl PaModel {
    pub fn amam(&self, rho: f64) -> f64 {
        match self {
            PaModel::Linear => rho,
            PaModel::Rapp(p) => rapp_amam(rho, p),
            PaModel::Polynomial(p) => p.amam(rho),
        }
    }

    pub fn ampm(&self, rho: f64) -> f64 {
        match self {
            PaModel::Linear | PaModel::Rapp(_) => 0.0,
            PaModel::Polynomial(p) => p.ampm(rho),
        }
    }

    pub fn apply(&self, samples: &[Complex64]) -> ComplexVec {
        match self {
            PaModel::Linear => samples.to_vec(),
            PaModel::Rapp(p) => apply_memoryless(samples, |r| rapp_amam(r, p), |_| 0.0),
            PaModel::Polynomial(p) => apply_polynomial(samples, p),
        }
    }
}

/// `|y| = F_A(|z|)`, `arg y = arg z + F_P(|z|)`, sample by sample.
pub fn apply_memoryless<A, P>(samples: &[Complex64], am_am: A, am_pm: P) -> ComplexVec
where
    A: Fn(f64) -> f64,
    P: Fn(f64) -> f64,
{
    samples
        .iter()
        .map(|z| {
            let (rho, phase) = z.to_polar();
            Complex64::from_polar(am_am(rho), phase + am_pm(rho))
        })
        .collect()
}

/// `y = sum_p beta_p z |z|^(p-1)`.
pub fn apply_polynomial(samples: &[Complex64], pa: &PaPolynomial) -> ComplexVec {
    samples.iter().map(|&z| z * pa.gain(z.norm())).collect()
}

/// `E[f(rho)]` for a Rayleigh envelope with `E[rho^2] = input_power`.
///
/// Composite Simpson rule in `u = rho^2 / input_power`, which is unit
/// exponential; the tail beyond `u = 50` is below `e^-50`.
pub fn rayleigh_expectation<F: Fn(f64) -> f64>(input_power: f64, f: F) -> f64 {
    const U_MAX: f64 = 50.0;
    const INTERVALS: usize = 8000;
    let h = U_MAX / INTERVALS as f64;
    let g = |u: f64| f((input_power * u).sqrt()) * (-u).exp();
    let mut acc = g(0.0) + g(U_MAX);
    for i in 1..INTERVALS {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * g(i as f64 * h);
    }
    acc * h / 3.0
}

/// Output back-off accounting at one drive level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObOReport {
    pub obo_db: f64,
    pub p_avg_out: f64,
    pub p_sat_out: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Obo {
    Saturating(ObOReport),
    /// The amplifier never saturates (linear model); back-off is undefined.
    NoSaturation,
}

impl Obo {
    pub fn report(&self) -> Option<ObOReport> {
        match self {
            Obo::Saturating(r) => Some(*r),
            Obo::NoSaturation => None,
        }
    }
}

/// Back-off for a complex Gaussian input of the given mean power.
///
/// Saturated output is `a_sat^2` for Rapp. For polynomials it is the largest
/// `|y(rho)|^2` on `rho in [0, 4 sigma]`.
pub fn compute_obo(pa: &PaModel, input_power: f64) -> Result<Obo> {
    if !(input_power > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "input power must be positive, got {input_power}"
        )));
    }
    let p_sat_out = match pa {
        PaModel::Linear => return Ok(Obo::NoSaturation),
        PaModel::Polynomial(p) if p.is_linear() => return Ok(Obo::NoSaturation),
        PaModel::Rapp(p) => p.a_sat * p.a_sat,
        PaModel::Polynomial(p) => {
            let top = 4.0 * input_power.sqrt();
            (0..=4000)
                .map(|i| p.amam(top * i as f64 / 4000.0).powi(2))
                .fold(0.0, f64::max)
        }
    };
    let p_avg_out = rayleigh_expectation(input_power, |r| pa.amam(r).powi(2));
    Ok(Obo::Saturating(ObOReport {
        obo_db: 10.0 * (p_sat_out / p_avg_out).log10(),
        p_avg_out,
        p_sat_out,
    }))
}

/// Input power that puts the amplifier at `target_obo_db` of back-off,
/// found by bisection on a log power axis.
pub fn drive_for_obo(pa: &PaModel, target_obo_db: f64) -> Result<f64> {
    let obo_at = |log_p: f64| -> Result<f64> {
        compute_obo(pa, 10f64.powf(log_p))?
            .report()
            .map(|r| r.obo_db)
            .ok_or_else(|| Error::Config("back-off is undefined for a linear amplifier".into()))
    };
    let (mut lo, mut hi) = (-8.0f64, 4.0f64);
    let (f_lo, f_hi) = (obo_at(lo)? - target_obo_db, obo_at(hi)? - target_obo_db);
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Config(format!(
            "target back-off {target_obo_db} dB is unreachable for this amplifier \
             (range {:.2} .. {:.2} dB)",
            f_hi + target_obo_db,
            f_lo + target_obo_db
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = obo_at(mid)? - target_obo_db;
        if f_mid.abs() < 1e-4 {
            return Ok(10f64.powf(mid));
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(10f64.powf(0.5 * (lo + hi)))
}

/// One row of an AM/AM - AM/PM measurement table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmAmPmPoint {
    pub rho_in: f64,
    pub amam_out: f64,
    pub ampm_rad: f64,
}

/// Tabulates a model on `n` evenly spaced amplitudes over `[0, rho_max]`.
pub fn tabulate(pa: &PaModel, rho_max: f64, n: usize) -> Vec<AmAmPmPoint> {
    (0..n)
        .map(|i| {
            let rho = rho_max * i as f64 / (n - 1).max(1) as f64;
            AmAmPmPoint {
                rho_in: rho,
                amam_out: pa.amam(rho),
                ampm_rad: pa.ampm(rho),
            }
        })
        .collect()
}

/// Weighted least-squares fit of the complex gain
/// `G(rho) = F_A(rho) e^{j F_P(rho)} / rho` to `sum_p beta_p rho^(p-1)`.
///
/// Rows are weighted by `rho exp(-rho^2 / input_power)`, the envelope
/// density of an OFDM signal at that mean power, so amplitudes the signal
/// rarely visits do not dominate. Only rows with `0 < rho <= rho_max` are
/// used.
pub fn fit_polynomial(
    table: &[AmAmPmPoint],
    p_max: usize,
    rho_max: f64,
    input_power: f64,
) -> Result<PaPolynomial> {
    if p_max.is_multiple_of(2) || p_max > MAX_ORDER {
        return Err(Error::UnsupportedOrder {
            order: p_max,
            reason: "polynomial order must be odd and at most 9",
        });
    }
    if !(input_power > 0.0) {
        return Err(Error::InvalidParameter("input power must be positive".into()));
    }
    let n_coef = p_max.div_ceil(2);
    let rows: Vec<&AmAmPmPoint> = table
        .iter()
        .filter(|r| r.rho_in > 0.0 && r.rho_in <= rho_max)
        .collect();
    let mut distinct: Vec<f64> = rows.iter().map(|r| r.rho_in).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < n_coef + 2 {
        return Err(Error::Underfit(format!(
            "{} distinct amplitudes in (0, {rho_max}] for {n_coef} coefficients; need {}",
            distinct.len(),
            n_coef + 2
        )));
    }

    let mut a = CMatrix::zeros(rows.len(), n_coef);
    let mut b = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let rho = r.rho_in;
        let w = (rho * (-rho * rho / input_power).exp()).sqrt();
        let mut pow = 1.0;
        for j in 0..n_coef {
            a[(i, j)] = Complex64::new(w * pow, 0.0);
            pow *= rho * rho;
        }
        b.push(Complex64::from_polar(r.amam_out / rho, r.ampm_rad) * w);
    }
    let betas = lstsq_small(&a, &b).map_err(|e| {
        Error::Underfit(format!(
            "amplitude range too narrow to resolve order {p_max} ({e})"
        ))
    })?;
    PaPolynomial::new(betas)
}

/// Reads a `rho_in,amam_out,ampm_rad` CSV table.
pub fn read_amam_table<R: Read>(reader: R) -> Result<Vec<AmAmPmPoint>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["rho_in", "amam_out", "ampm_rad"] {
        return Err(Error::Parse(format!(
            "expected header rho_in,amam_out,ampm_rad, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize()
        .map(|row| row.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

pub fn write_amam_table<W: Write>(writer: W, table: &[AmAmPmPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in table {
        w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a fitted model as text:
///
/// ```text
/// order 5
/// beta 1 <re> <im>
/// beta 3 <re> <im>
/// beta 5 <re> <im>
/// ```
pub fn write_polynomial<W: Write>(mut writer: W, pa: &PaPolynomial) -> Result<()> {
    writeln!(writer, "order {}", pa.p_max())?;
    for (i, b) in pa.betas().iter().enumerate() {
        writeln!(writer, "beta {} {:e} {:e}", 2 * i + 1, b.re, b.im)?;
    }
    Ok(())
}

pub fn parse_polynomial(text: &str) -> Result<PaPolynomial> {
    let mut order = None;
    let mut betas: Vec<Option<Complex64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Parse(format!("line {}: cannot parse {line:?}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["order", p] => {
                let p: usize = p.parse().map_err(|_| bad())?;
                if p.is_multiple_of(2) || p > MAX_ORDER {
                    return Err(bad());
                }
                order = Some(p);
                betas = vec![None; p.div_ceil(2)];
            }
            ["beta", p, re, im] => {
                let p: usize = p.parse().map_err(|_| bad())?;
                let v = Complex64::new(re.parse().map_err(|_| bad())?, im.parse().map_err(|_| bad())?);
                let slot = betas.get_mut((p.saturating_sub(1)) / 2).filter(|_| p % 2 == 1);
                *slot.ok_or_else(bad)? = Some(v);
            }
            _ => return Err(bad()),
        }
    }
    if order.is_none() {
        return Err(Error::Parse("missing `order` line".into()));
    }
    let betas = betas
        .into_iter()
        .enumerate()
        .map(|(i, b)| b.ok_or_else(|| Error::Parse(format!("missing beta {}", 2 * i + 1))))
        .collect::<Result<Vec<_>>>()?;
    PaPolynomial::new(betas)
}
