//! Joint least-squares estimation of the effective channel and the PA model
//! from known training symbols.
//!
//! The received training symbols are modelled as
//! `R^(m) = diag(h') (S^(m) + U^(m) c)`, where the columns of `U^(m)` are the
//! distortion residuals `d^(p) - T^(p) S^(m)` and `h' = alpha H` carries the
//! Bussgang gain. The error function
//! `J = sum_m || R^(m) - diag(h') (S^(m) + U^(m) c) ||^2` is minimized by
//! alternating exact least-squares updates of `h'` (per subcarrier, `c`
//! fixed) and `c` (stacked over all symbols, `h'` fixed), starting from the
//! conventional least-squares channel and `c = 0`.

use std::io::Write;

use num_complex::Complex64;

use crate::dsp::{lstsq_small, CMatrix, ComplexVec};
use crate::nld::{DistortionBasis, NormalizedCoeffs, TTable};
use crate::ofdm::SubcarrierLayout;
use crate::{Error, Result};

/// Relative floor below which a (modified) reference value counts as zero.
pub const EPS_DIV: f64 = 1e-6;

/// Received and known training symbols with their distortion residuals.
#[derive(Debug, Clone)]
pub struct TrainingObservation {
    r: Vec<ComplexVec>,
    s: Vec<ComplexVec>,
    /// `u[m][j]` is the residual of order `2j + 3` for symbol `m`.
    u: Vec<Vec<ComplexVec>>,
    /// Typical magnitude of `d^(p) / S`, per order.
    t_scale: Vec<f64>,
}

impl TrainingObservation {
    /// At least one symbol; [`joint_estimate`] needs two.
    pub fn new(
        r: Vec<ComplexVec>,
        s: Vec<ComplexVec>,
        layout: &SubcarrierLayout,
        t: &TTable,
    ) -> Result<Self> {
        if r.is_empty() || r.len() != s.len() {
            return Err(Error::LengthMismatch { expected: s.len().max(1), got: r.len() });
        }
        let n = layout.n_active();
        for v in r.iter().chain(&s) {
            if v.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: v.len() });
            }
        }
        let u = s
            .iter()
            .map(|sm| DistortionBasis::new(sm, layout, t).residuals(sm))
            .collect();
        let t_scale = t.values().iter().map(|v| v.abs()).collect();
        Ok(TrainingObservation { r, s, u, t_scale })
    }

    pub fn n(&self) -> usize {
        self.s[0].len()
    }

    pub fn m(&self) -> usize {
        self.s.len()
    }

    pub fn p_max(&self) -> usize {
        2 * self.u[0].len() + 1
    }

    pub fn received(&self) -> &[ComplexVec] {
        &self.r
    }

    pub fn reference(&self) -> &[ComplexVec] {
        &self.s
    }

    /// A residual column that is rounding noise next to the replica energy it
    /// was separated from carries no information about its coefficient.
    fn check_columns(&self) -> Result<()> {
        let s_norm = self.s.iter().flatten().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        for j in 0..self.u[0].len() {
            let u_norm = self.u.iter().flat_map(|u| &u[j]).map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if !(u_norm > 1e-10 * self.t_scale[j] * s_norm) {
                return Err(Error::UnidentifiableOrder { order: 2 * j + 3 });
            }
        }
        Ok(())
    }

    /// `S^(m) + U^(m) c`.
    pub fn modified_reference(&self, m: usize, c: &NormalizedCoeffs) -> ComplexVec {
        let mut x = self.s[m].clone();
        for (j, cp) in c.as_slice().iter().enumerate().take(self.u[m].len()) {
            for (xk, uk) in x.iter_mut().zip(&self.u[m][j]) {
                *xk += cp * uk;
            }
        }
        x
    }
}

/// How the channel half-step combines the training symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelUpdate {
    /// `sum_m R X* / sum_m |X|^2`, the exact minimizer of `J` over `h'_k`.
    LeastSquares,
    /// `(1/M) sum_m R / X`.
    RatioAverage,
}

/// How the coefficient half-step is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientUpdate {
    /// Exact minimizer of `J` over `c` for fixed `h'` ([`estimate_c_given_h`]).
    Alternating,
    /// Gauss-Newton step on `J` with `h'` eliminated ([`projected_c_step`]),
    /// falling back to the alternating step whenever it would raise `J`.
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub p_max: usize,
    pub max_iters: usize,
    /// Stop when `J` falls by less than `tol * J` in a full iteration.
    pub tol: f64,
    pub channel_update: ChannelUpdate,
    pub coefficient_update: CoefficientUpdate,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            p_max: 5,
            max_iters: 20,
            tol: 1e-4,
            channel_update: ChannelUpdate::LeastSquares,
            coefficient_update: CoefficientUpdate::Projected,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub h_eff: ComplexVec,
    pub c_hat: NormalizedCoeffs,
    /// `J` at the starting point, then after every full iteration.
    pub j_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// `J = sum_m || R^(m) - diag(h') (S^(m) + U^(m) c) ||^2`.
pub fn error_j(obs: &TrainingObservation, h_eff: &[Complex64], c: &NormalizedCoeffs) -> f64 {
    (0..obs.m())
        .map(|m| {
            let x = obs.modified_reference(m, c);
            obs.r[m]
                .iter()
                .zip(&x)
                .zip(h_eff)
                .map(|((r, x), h)| (r - h * x).norm_sqr())
                .sum::<f64>()
        })
        .sum()
}

/// Channel half-step for fixed `c`.
///
/// With `c = 0` this is conventional least squares, `(1/M) sum_m R / S`.
/// Subcarriers whose modified references all fall below
/// `EPS_DIV * mean|X|` keep the value from `prev` (or zero).
pub fn estimate_h_given_c(
    obs: &TrainingObservation,
    c: &NormalizedCoeffs,
    prev: Option<&[Complex64]>,
    mode: ChannelUpdate,
) -> ComplexVec {
    let mode = if c.is_zero() { ChannelUpdate::RatioAverage } else { mode };
    let x: Vec<ComplexVec> = (0..obs.m()).map(|m| obs.modified_reference(m, c)).collect();
    let mean_abs = x.iter().flatten().map(|v| v.norm()).sum::<f64>() / (obs.m() * obs.n()) as f64;
    let floor = EPS_DIV * mean_abs;
    (0..obs.n())
        .map(|k| {
            let fallback = prev.map_or(Complex64::new(0.0, 0.0), |p| p[k]);
            match mode {
                ChannelUpdate::LeastSquares => {
                    let (mut num, mut den) = (Complex64::new(0.0, 0.0), 0.0);
                    for m in 0..obs.m() {
                        num += obs.r[m][k] * x[m][k].conj();
                        den += x[m][k].norm_sqr();
                    }
                    if den.sqrt() <= floor { fallback } else { num / den }
                }
                ChannelUpdate::RatioAverage => {
                    let (mut acc, mut used) = (Complex64::new(0.0, 0.0), 0usize);
                    for m in 0..obs.m() {
                        if x[m][k].norm() > floor {
                            acc += obs.r[m][k] / x[m][k];
                            used += 1;
                        }
                    }
                    if used == 0 { fallback } else { acc / used as f64 }
                }
            }
        })
        .collect()
}

/// Conventional least-squares channel estimate.
pub fn ls_channel(obs: &TrainingObservation) -> ComplexVec {
    estimate_h_given_c(obs, &NormalizedCoeffs::zeros(obs.p_max()), None, ChannelUpdate::RatioAverage)
}

/// Coefficient half-step for fixed `h'`: least squares over the `M N`
/// stacked rows `diag(h') U c = R - diag(h') S`.
pub fn estimate_c_given_h(obs: &TrainingObservation, h_eff: &[Complex64]) -> Result<NormalizedCoeffs> {
    let (n, m_count) = (obs.n(), obs.m());
    let cols = obs.u[0].len();
    if cols == 0 {
        return Ok(NormalizedCoeffs::zeros(1));
    }
    obs.check_columns()?;
    let mut a = CMatrix::zeros(m_count * n, cols);
    let mut b = Vec::with_capacity(m_count * n);
    for m in 0..m_count {
        for k in 0..n {
            let row = m * n + k;
            for j in 0..cols {
                a[(row, j)] = h_eff[k] * obs.u[m][j][k];
            }
            b.push(obs.r[m][k] - h_eff[k] * obs.s[m][k]);
        }
    }
    solve_coefficients(&a, &b).map(NormalizedCoeffs::new)
}

/// Coefficient update with the channel profiled out.
///
/// For fixed `c` the optimal `h'_k` is a projection onto the modified
/// reference `X_k = (X^(1)_k, .., X^(M)_k)`, so `J` depends on `c` alone
/// through the residual `P_k r_k`, with `P_k` the projector orthogonal to
/// `X_k`. Linearizing `X_k` in `c` and dropping the derivative of the
/// projector gives a Gauss-Newton step whose regressors are the columns
/// `h'_k U_k` with their component along `X_k` removed. Stationary points
/// coincide with those of the alternating scheme; the plain alternation
/// spends part of every step re-fitting the channel and converges only
/// linearly.
pub fn projected_c_step(
    obs: &TrainingObservation,
    h_eff: &[Complex64],
    c: &NormalizedCoeffs,
) -> Result<NormalizedCoeffs> {
    let (n, m_count) = (obs.n(), obs.m());
    let cols = obs.u[0].len();
    if cols == 0 {
        return Ok(NormalizedCoeffs::zeros(1));
    }
    obs.check_columns()?;
    let x: Vec<ComplexVec> = (0..m_count).map(|m| obs.modified_reference(m, c)).collect();
    let mut a = CMatrix::zeros(m_count * n, cols);
    let mut b = vec![Complex64::new(0.0, 0.0); m_count * n];
    let mut v = vec![Complex64::new(0.0, 0.0); m_count];
    for k in 0..n {
        let xx: f64 = (0..m_count).map(|m| x[m][k].norm_sqr()).sum();
        for j in 0..cols {
            for (m, vm) in v.iter_mut().enumerate() {
                *vm = h_eff[k] * obs.u[m][j][k];
            }
            let along: Complex64 = if xx > 0.0 {
                (0..m_count).map(|m| x[m][k].conj() * v[m]).sum::<Complex64>() / xx
            } else {
                Complex64::new(0.0, 0.0)
            };
            for m in 0..m_count {
                a[(m * n + k, j)] = v[m] - x[m][k] * along;
            }
        }
        for m in 0..m_count {
            b[m * n + k] = obs.r[m][k] - h_eff[k] * x[m][k];
        }
    }
    let delta = solve_coefficients(&a, &b)?;
    Ok(NormalizedCoeffs::new(
        c.as_slice().iter().zip(&delta).map(|(c, d)| c + d).collect(),
    ))
}

fn solve_coefficients(a: &CMatrix, b: &[Complex64]) -> Result<ComplexVec> {
    match lstsq_small(a, b) {
        Ok(c) => Ok(c),
        Err(Error::RankDeficient { column, .. }) => {
            Err(Error::UnidentifiableOrder { order: 2 * column + 3 })
        }
        Err(e) => Err(e),
    }
}

/// Alternating minimization of `J`.
///
/// Starts from the least-squares channel with `c = 0`; each full iteration
/// updates `c` (see [`CoefficientUpdate`]) then `h'`. Stops when `J` decreases by less than
/// `tol * J_prev`, when `J` is negligible against the received energy, or
/// after `max_iters`. An iteration that would increase `J` is discarded.
pub fn joint_estimate(obs: &TrainingObservation, cfg: &EstimatorConfig) -> Result<EstimatorState> {
    if obs.m() < 2 {
        return Err(Error::InvalidParameter(format!(
            "joint estimation needs at least two training symbols, got {}",
            obs.m()
        )));
    }
    if cfg.p_max != obs.p_max() {
        return Err(Error::InvalidParameter(format!(
            "observation built for order {}, estimator configured for {}",
            obs.p_max(),
            cfg.p_max
        )));
    }
    let energy: f64 = obs.r.iter().flatten().map(|v| v.norm_sqr()).sum();
    let negligible = 1e-24 * energy;

    let mut h = ls_channel(obs);
    let mut c = NormalizedCoeffs::zeros(cfg.p_max);
    let mut j = error_j(obs, &h, &c);
    let mut state = EstimatorState {
        h_eff: h.clone(),
        c_hat: c.clone(),
        j_history: vec![j],
        iterations: 0,
        converged: false,
    };
    if cfg.p_max < 3 {
        state.converged = true;
        return Ok(state);
    }
    let alternate = |h: &[Complex64]| -> Result<(NormalizedCoeffs, ComplexVec, f64)> {
        let c_new = estimate_c_given_h(obs, h)?;
        let h_new = estimate_h_given_c(obs, &c_new, Some(h), cfg.channel_update);
        let j_new = error_j(obs, &h_new, &c_new);
        Ok((c_new, h_new, j_new))
    };
    for it in 1..=cfg.max_iters {
        let (c_new, h_new, j_new) = match cfg.coefficient_update {
            CoefficientUpdate::Alternating => alternate(&h)?,
            CoefficientUpdate::Projected => {
                let c_new = projected_c_step(obs, &h, &c)?;
                let h_new = estimate_h_given_c(obs, &c_new, Some(&h), cfg.channel_update);
                let j_new = error_j(obs, &h_new, &c_new);
                if j_new <= j {
                    (c_new, h_new, j_new)
                } else {
                    alternate(&h)?
                }
            }
        };
        state.iterations = it;
        if j_new > j {
            state.j_history.push(j);
            state.converged = true;
            break;
        }
        let decrease = j - j_new;
        h = h_new;
        c = c_new;
        j = j_new;
        state.j_history.push(j);
        if decrease < cfg.tol * (j + decrease) || j <= negligible {
            state.converged = true;
            break;
        }
    }
    state.h_eff = h;
    state.c_hat = c;
    Ok(state)
}

/// `||est - s truth||^2 / ||s truth||^2` with the complex scale `s` that
/// best aligns `truth` to `est`.
pub fn channel_nmse(est: &[Complex64], truth: &[Complex64]) -> f64 {
    let ip: Complex64 = truth.iter().zip(est).map(|(t, e)| t.conj() * e).sum();
    let tt: f64 = truth.iter().map(|t| t.norm_sqr()).sum();
    let s = ip / tt;
    let err: f64 = est.iter().zip(truth).map(|(e, t)| (e - s * t).norm_sqr()).sum();
    err / (s.norm_sqr() * tt)
}

/// Writes `iter,j,re_c3,im_c3,..` rows: the starting point is iteration 0
/// with `c = 0`; later rows carry the final coefficients.
pub fn write_history_csv<W: Write>(writer: W, state: &EstimatorState) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["iter".to_string(), "j".to_string()];
    for p in (3..=state.c_hat.p_max()).step_by(2) {
        header.push(format!("re_c{p}"));
        header.push(format!("im_c{p}"));
    }
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(&header).map_err(io)?;
    for (i, j) in state.j_history.iter().enumerate() {
        let mut row = vec![i.to_string(), j.to_string()];
        for c in state.c_hat.as_slice() {
            let c = if i == 0 { Complex64::new(0.0, 0.0) } else { *c };
            row.push(c.re.to_string());
            row.push(c.im.to_string());
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::Constellation;
    use crate::dsp::{complex_gaussian, RngStream};
    use crate::nld::reconstruct_distortion;
    use crate::ofdm::fixed_training_symbol;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    struct Setup {
        layout: SubcarrierLayout,
        t: TTable,
        s: Vec<ComplexVec>,
        h: ComplexVec,
        c_true: NormalizedCoeffs,
    }

    fn setup(n: usize, m: usize, seed: u64, c_true: NormalizedCoeffs) -> Setup {
        let con = Constellation::qam(16).unwrap();
        let layout = SubcarrierLayout::contiguous(n);
        let t = TTable::closed_form(n, &con, c_true.p_max()).unwrap();
        let mut rng = RngStream::new(seed, 0).rng();
        let a = con.e2().sqrt();
        let mut s = vec![fixed_training_symbol(n).iter().map(|v| v * a).collect::<ComplexVec>()];
        while s.len() < m {
            s.push((0..n).map(|_| c(if rng.random::<bool>() { a } else { -a }, 0.0)).collect());
        }
        let h = (0..n).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        Setup { layout, t, s, h, c_true }
    }

    /// Received symbols generated exactly by the model.
    fn forward(st: &Setup) -> Vec<ComplexVec> {
        st.s
            .iter()
            .map(|s| {
                let basis = DistortionBasis::new(s, &st.layout, &st.t);
                let d = reconstruct_distortion(s, &st.c_true, &basis);
                s.iter().zip(&d).zip(&st.h).map(|((s, d), h)| h * (s + d)).collect()
            })
            .collect()
    }

    fn observation(st: &Setup, r: Vec<ComplexVec>) -> TrainingObservation {
        TrainingObservation::new(r, st.s.clone(), &st.layout, &st.t).unwrap()
    }

    fn rel(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    fn typical_c() -> NormalizedCoeffs {
        // third- and fifth-order terms of a mildly compressed amplifier,
        // scaled to 16-QAM symbols on 120 subcarriers
        NormalizedCoeffs::new(vec![c(-2.5e-5, 4e-6), c(1.5e-10, -2e-11)])
    }

    #[test]
    fn j_examples() {
        let st = setup(32, 2, 1, NormalizedCoeffs::new(vec![c(-1e-4, 0.0)]));
        let obs = observation(&st, forward(&st));
        assert!(error_j(&obs, &st.h, &st.c_true) < 1e-20);
        let zero = vec![c(0.0, 0.0); 32];
        let energy: f64 = obs.received().iter().flatten().map(|v| v.norm_sqr()).sum();
        assert!((error_j(&obs, &zero, &st.c_true) - energy).abs() < 1e-9 * energy);

        let mut rng = RngStream::new(2, 0).rng();
        for _ in 0..100 {
            let h: ComplexVec = st.h.iter().map(|h| h + complex_gaussian(&mut rng, 1e-6)).collect();
            assert!(error_j(&obs, &h, &st.c_true) > 0.0);
        }
    }

    #[test]
    fn channel_step_examples() {
        let st = setup(48, 2, 3, NormalizedCoeffs::zeros(5));
        let obs = observation(&st, forward(&st));
        let h = ls_channel(&obs);
        assert!(rel(&h, &st.h) < 1e-12);
        let manual: ComplexVec = (0..48)
            .map(|k| (obs.received()[0][k] / st.s[0][k] + obs.received()[1][k] / st.s[1][k]) / 2.0)
            .collect();
        assert_eq!(h, manual);

        let st = setup(48, 2, 4, typical_c());
        let obs = observation(&st, forward(&st));
        for mode in [ChannelUpdate::LeastSquares, ChannelUpdate::RatioAverage] {
            assert!(rel(&estimate_h_given_c(&obs, &st.c_true, None, mode), &st.h) < 1e-10);
        }
    }

    #[test]
    fn coefficient_step_examples() {
        let st = setup(48, 2, 5, NormalizedCoeffs::zeros(5));
        let obs = observation(&st, forward(&st));
        let got = estimate_c_given_h(&obs, &st.h).unwrap();
        assert!(got.as_slice().iter().all(|v| v.norm() < 1e-10 * 1e-5));

        let st = setup(120, 2, 6, typical_c());
        let obs = observation(&st, forward(&st));
        let got = estimate_c_given_h(&obs, &st.h).unwrap();
        assert!(rel(got.as_slice(), st.c_true.as_slice()) < 1e-8);
    }

    #[test]
    fn small_systems_are_identifiable() {
        for seed in 0..20 {
            let st = setup(8, 2, 100 + seed, typical_c());
            let obs = observation(&st, forward(&st));
            assert!(estimate_c_given_h(&obs, &st.h).is_ok(), "seed {seed}");
        }
    }

    #[test]
    fn unidentifiable_order_is_named() {
        // a single subcarrier with constant-modulus training has no
        // third-order residual at all
        let st = setup(1, 2, 7, typical_c());
        let obs = observation(&st, forward(&st));
        assert!(matches!(
            estimate_c_given_h(&obs, &st.h),
            Err(Error::UnidentifiableOrder { order: 3 })
        ));
    }

    #[test]
    fn recovers_noiseless_model() {
        let st = setup(120, 2, 8, typical_c());
        let obs = observation(&st, forward(&st));
        let est = joint_estimate(&obs, &EstimatorConfig::default()).unwrap();
        assert!(est.iterations <= 10, "{} iterations", est.iterations);
        assert!(rel(&est.h_eff, &st.h) < 1e-6);
        assert!(rel(est.c_hat.as_slice(), st.c_true.as_slice()) < 1e-6);
        for w in est.j_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn both_coefficient_updates_share_the_minimizer() {
        let mut rng = RngStream::new(14, 0).rng();
        let st = setup(120, 2, 15, typical_c());
        let r: Vec<ComplexVec> = forward(&st)
            .into_iter()
            .map(|r| r.iter().map(|v| v + complex_gaussian(&mut rng, 0.05)).collect())
            .collect();
        let obs = observation(&st, r);
        let run = |coefficient_update| {
            let cfg = EstimatorConfig { max_iters: 400, tol: 1e-13, coefficient_update, ..Default::default() };
            joint_estimate(&obs, &cfg).unwrap()
        };
        let alt = run(CoefficientUpdate::Alternating);
        let proj = run(CoefficientUpdate::Projected);
        assert!(proj.iterations < alt.iterations);
        assert!(rel(proj.c_hat.as_slice(), alt.c_hat.as_slice()) < 1e-4);
        assert!((proj.j_history.last().unwrap() / alt.j_history.last().unwrap() - 1.0).abs() < 1e-6);
        for est in [&alt, &proj] {
            for w in est.j_history.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn linear_channel_converges_immediately() {
        let st = setup(64, 2, 9, NormalizedCoeffs::zeros(5));
        let obs = observation(&st, forward(&st));
        let est = joint_estimate(&obs, &EstimatorConfig::default()).unwrap();
        assert_eq!(est.iterations, 1);
        assert!(est.converged);
        assert!(rel(&est.h_eff, &st.h) < 1e-12);
        assert!(est.c_hat.as_slice().iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn half_steps_never_increase_j() {
        let mut rng = RngStream::new(10, 0).rng();
        for seed in 0..10 {
            let st = setup(120, 3, 200 + seed, typical_c());
            let r: Vec<ComplexVec> = forward(&st)
                .into_iter()
                .map(|r| r.iter().map(|v| v + complex_gaussian(&mut rng, 0.5)).collect())
                .collect();
            let obs = observation(&st, r);
            let mut h = ls_channel(&obs);
            let mut cc = NormalizedCoeffs::zeros(5);
            let j0 = error_j(&obs, &h, &cc);
            let mut j = j0;
            for _ in 0..6 {
                cc = estimate_c_given_h(&obs, &h).unwrap();
                let j1 = error_j(&obs, &h, &cc);
                assert!(j1 <= j + 1e-9 * j0);
                h = estimate_h_given_c(&obs, &cc, Some(&h), ChannelUpdate::LeastSquares);
                let j2 = error_j(&obs, &h, &cc);
                assert!(j2 <= j1 + 1e-9 * j0);
                j = j2;
            }
        }
    }

    #[test]
    fn rejects_single_symbol_and_order_mismatch() {
        let st = setup(16, 2, 11, typical_c());
        let r = forward(&st);
        let one = TrainingObservation::new(vec![r[0].clone()], vec![st.s[0].clone()], &st.layout, &st.t).unwrap();
        assert!(joint_estimate(&one, &EstimatorConfig::default()).is_err());
        let obs = observation(&st, r);
        let cfg = EstimatorConfig { p_max: 3, ..Default::default() };
        assert!(joint_estimate(&obs, &cfg).is_err());
        assert!(TrainingObservation::new(vec![vec![c(1.0, 0.0)]], vec![], &st.layout, &st.t).is_err());
    }

    #[test]
    fn nmse_is_scale_invariant() {
        let mut rng = RngStream::new(12, 0).rng();
        let h: ComplexVec = (0..50).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let scaled: ComplexVec = h.iter().map(|v| v * c(0.3, -1.2)).collect();
        assert!(channel_nmse(&scaled, &h) < 1e-28);
        let noisy: ComplexVec = h.iter().map(|v| v + complex_gaussian(&mut rng, 0.01)).collect();
        let e = channel_nmse(&noisy, &h);
        assert!(e > 0.002 && e < 0.02);
    }

    #[test]
    fn history_csv_layout() {
        let st = setup(120, 2, 13, typical_c());
        let obs = observation(&st, forward(&st));
        let est = joint_estimate(&obs, &EstimatorConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_history_csv(&mut buf, &est).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iter,j,re_c3,im_c3,re_c5,im_c5"));
        assert_eq!(lines.count(), est.j_history.len());
    }
}
