//! Zero-forcing equalization followed by iterative decision-aided
//! cancellation of the PA distortion.
//!
//! After equalization a data symbol reads `R_eq = S + sum_p c_p (d^(p) -
//! T^(p) S) + noise`. Given tentative decisions `S_hat`, the distortion is
//! rebuilt from `S_hat` and a fraction `mu_i` of it is subtracted; the result
//! is decided again, until the decisions stop changing. The coefficients may
//! be re-estimated per symbol from the decisions and smoothed across symbols
//! with `c_avg = gamma c_t + (1 - gamma) c_avg`.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::dsp::ComplexVec;
use crate::estimator::{estimate_c_given_h, TrainingObservation, EPS_DIV};
use crate::nld::{reconstruct_distortion, DistortionBasis, NormalizedCoeffs, TTable};
use crate::ofdm::SubcarrierLayout;
use crate::{Error, Result};

/// Where the decisions used for reconstruction come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    /// Hard slicer inside every iteration.
    Slicer,
    /// Slicer inside the loop, then one extra pass per packet with re-encoded
    /// decoder output.
    Fec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompensatorConfig {
    pub max_iters: usize,
    /// `mu_1, mu_2, ..`; the last value repeats for later iterations.
    /// Empty selects the default for the number of subcarriers.
    pub damping: Vec<f64>,
    pub gamma: f64,
    pub decision_source: DecisionSource,
    /// Re-estimate the coefficients from the decisions of every data symbol.
    pub update_c: bool,
}

impl Default for CompensatorConfig {
    fn default() -> Self {
        CompensatorConfig {
            max_iters: 5,
            damping: Vec::new(),
            gamma: 0.25,
            decision_source: DecisionSource::Slicer,
            update_c: true,
        }
    }
}

/// `[0.75, 1.0]` for up to 64 subcarriers, `[1.0]` above.
pub fn default_damping(n_active: usize) -> Vec<f64> {
    if n_active <= 64 {
        vec![0.75, 1.0]
    } else {
        vec![1.0]
    }
}

impl CompensatorConfig {
    /// Fills in the default damping schedule and checks the invariants.
    pub fn resolved(&self, n_active: usize) -> Result<Self> {
        let mut cfg = self.clone();
        if cfg.damping.is_empty() {
            cfg.damping = default_damping(n_active);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.damping.is_empty() {
            return Err(Error::Config("damping schedule is empty".into()));
        }
        if self.damping.iter().any(|&m| !(m > 0.0 && m <= 1.0)) {
            return Err(Error::Config(format!("damping factors must lie in (0, 1]: {:?}", self.damping)));
        }
        if self.damping.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!("damping schedule must be non-decreasing: {:?}", self.damping)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    /// Damping of compensation iteration `i >= 1`.
    pub fn mu(&self, i: usize) -> f64 {
        let idx = i.saturating_sub(1).min(self.damping.len().saturating_sub(1));
        self.damping.get(idx).copied().unwrap_or(1.0)
    }
}

/// Equalized symbol; subcarriers with a vanishing channel are zeroed and
/// flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct Equalized {
    pub r_eq: ComplexVec,
    pub erased: Vec<bool>,
}

/// `R_k / h'_k`, with `|h'_k| <= 1e-6 mean|h'|` treated as an erasure.
pub fn zf_equalize(r: &[Complex64], h_eff: &[Complex64]) -> Equalized {
    let mean = h_eff.iter().map(|h| h.norm()).sum::<f64>() / h_eff.len().max(1) as f64;
    let floor = EPS_DIV * mean;
    let mut erased = vec![false; r.len()];
    let r_eq = r
        .iter()
        .zip(h_eff)
        .zip(erased.iter_mut())
        .map(|((r, h), e)| {
            if h.norm() > floor {
                r / h
            } else {
                *e = true;
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    Equalized { r_eq, erased }
}

/// `R_eq - mu sum_p c_p (d_hat^(p) - T^(p) S_hat)` with `d_hat` built from
/// the decisions.
pub fn compensate_once(
    r_eq: &[Complex64],
    s_hat: &[Complex64],
    c: &NormalizedCoeffs,
    mu: f64,
    layout: &SubcarrierLayout,
    t: &TTable,
) -> ComplexVec {
    if c.is_zero() {
        return r_eq.to_vec();
    }
    let basis = DistortionBasis::new(s_hat, layout, t);
    let dist = reconstruct_distortion(s_hat, c, &basis);
    r_eq.iter().zip(&dist).map(|(r, d)| r - d * mu).collect()
}

/// Running average of the per-symbol coefficient estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedCoeffs {
    pub c_avg: NormalizedCoeffs,
    /// Number of symbols folded in so far.
    pub t: usize,
}

impl SmoothedCoeffs {
    pub fn new(c_init: NormalizedCoeffs) -> Self {
        SmoothedCoeffs { c_avg: c_init, t: 0 }
    }

    /// `gamma c_t + (1 - gamma) c_avg`.
    pub fn update(&self, c_t: &NormalizedCoeffs, gamma: f64) -> Self {
        SmoothedCoeffs { c_avg: c_t.blend(&self.c_avg, gamma), t: self.t + 1 }
    }
}

/// Single-symbol least-squares estimate of `c` with the decisions as
/// reference, i.e. the coefficient half-step of the joint estimator with one
/// symbol.
pub fn estimate_c_from_decisions(
    r: &[Complex64],
    h_eff: &[Complex64],
    s_hat: &[Complex64],
    layout: &SubcarrierLayout,
    t: &TTable,
) -> Result<NormalizedCoeffs> {
    let obs = TrainingObservation::new(vec![r.to_vec()], vec![s_hat.to_vec()], layout, t)?;
    estimate_c_given_h(&obs, h_eff)
}

/// Decision-directed update of the smoothed coefficients. A rank-deficient
/// single-symbol solve leaves the average untouched.
pub fn update_c_decision_directed(
    r: &[Complex64],
    h_eff: &[Complex64],
    s_hat: &[Complex64],
    sm: &SmoothedCoeffs,
    gamma: f64,
    layout: &SubcarrierLayout,
    t: &TTable,
) -> SmoothedCoeffs {
    match estimate_c_from_decisions(r, h_eff, s_hat, layout, t) {
        Ok(c_t) => sm.update(&c_t, gamma),
        Err(_) => SmoothedCoeffs { c_avg: sm.c_avg.clone(), t: sm.t + 1 },
    }
}

/// Maps compensated subcarrier values to decisions.
pub trait Decider {
    fn decide(&self, v: &[Complex64]) -> ComplexVec;
}

/// Nearest constellation point.
pub struct Slicer<'a>(pub &'a Constellation);

impl Decider for Slicer<'_> {
    fn decide(&self, v: &[Complex64]) -> ComplexVec {
        self.0.slice_hard(v)
    }
}

/// Genie decisions: always the transmitted symbols.
pub struct IdealDecisions<'a>(pub &'a [Complex64]);

impl Decider for IdealDecisions<'_> {
    fn decide(&self, _v: &[Complex64]) -> ComplexVec {
        self.0.to_vec()
    }
}

/// Diagnostics of one iteration; iteration 0 is the plain zero-forcing output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationDiagnostics {
    pub iter: usize,
    pub n_changed_decisions: usize,
    /// Mean `|R_comp - S_hat|^2` over the subcarriers.
    pub residual_power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolOutcome {
    pub decisions: ComplexVec,
    pub r_comp: ComplexVec,
    /// Compensation iterations run (0 when the loop is disabled).
    pub iterations: usize,
    /// `snapshots[i]` is the compensated symbol after iteration `i`
    /// (`snapshots[0] = R_eq`), padded with the final value up to
    /// `max_iters`.
    pub snapshots: Vec<ComplexVec>,
    pub diagnostics: Vec<IterationDiagnostics>,
    /// Coefficients used in the last iteration.
    pub c_used: NormalizedCoeffs,
}

/// Coefficient source for [`compensate_symbol`].
#[derive(Debug, Clone, Copy)]
pub enum CoeffTracking<'a> {
    /// Use the given coefficients unchanged.
    Fixed(&'a NormalizedCoeffs),
    /// Re-estimate from the decisions in every iteration and blend with the
    /// running average; needs the received symbol before equalization.
    DecisionDirected {
        r: &'a [Complex64],
        h_eff: &'a [Complex64],
        smoothed: &'a SmoothedCoeffs,
        gamma: f64,
    },
}

impl CoeffTracking<'_> {
    fn coefficients(&self, s_hat: &[Complex64], layout: &SubcarrierLayout, t: &TTable) -> NormalizedCoeffs {
        match *self {
            CoeffTracking::Fixed(c) => c.clone(),
            CoeffTracking::DecisionDirected { r, h_eff, smoothed, gamma } => {
                update_c_decision_directed(r, h_eff, s_hat, smoothed, gamma, layout, t).c_avg
            }
        }
    }
}

fn residual_power(r: &[Complex64], s: &[Complex64]) -> f64 {
    r.iter().zip(s).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / r.len().max(1) as f64
}

/// Iterative compensation of one equalized symbol.
///
/// Iteration 0 decides on `R_eq`. Iteration `i` subtracts `mu_i` times the
/// distortion rebuilt from the previous decisions and decides again. The
/// loop stops after `max_iters` or once an iteration leaves the decisions
/// unchanged and the next one would subtract the same term, so that a
/// further iteration could not change anything.
pub fn compensate_symbol<D: Decider + ?Sized>(
    r_eq: &[Complex64],
    tracking: CoeffTracking<'_>,
    cfg: &CompensatorConfig,
    decider: &D,
    layout: &SubcarrierLayout,
    t: &TTable,
) -> SymbolOutcome {
    let mut decisions = decider.decide(r_eq);
    let mut r_comp = r_eq.to_vec();
    let mut snapshots = vec![r_comp.clone()];
    let mut diagnostics = vec![IterationDiagnostics {
        iter: 0,
        n_changed_decisions: 0,
        residual_power: residual_power(r_eq, &decisions),
    }];
    let mut c_used = match tracking {
        CoeffTracking::Fixed(c) => c.clone(),
        CoeffTracking::DecisionDirected { smoothed, .. } => smoothed.c_avg.clone(),
    };
    let mut iterations = 0;
    for i in 1..=cfg.max_iters {
        let c = tracking.coefficients(&decisions, layout, t);
        let mu = cfg.mu(i);
        r_comp = compensate_once(r_eq, &decisions, &c, mu, layout, t);
        let next = decider.decide(&r_comp);
        let changed = next.iter().zip(&decisions).filter(|(a, b)| a != b).count();
        diagnostics.push(IterationDiagnostics {
            iter: i,
            n_changed_decisions: changed,
            residual_power: residual_power(&r_comp, &next),
        });
        snapshots.push(r_comp.clone());
        decisions = next;
        c_used = c;
        iterations = i;
        if changed == 0 && (cfg.mu(i + 1) == mu || c_used.is_zero()) {
            break;
        }
    }
    while snapshots.len() <= cfg.max_iters {
        snapshots.push(r_comp.clone());
    }
    SymbolOutcome { decisions, r_comp, iterations, snapshots, diagnostics, c_used }
}

/// Fixed-coefficient iteration; returns final decisions, compensated symbol
/// and the number of iterations.
pub fn iterate<D: Decider + ?Sized>(
    r_eq: &[Complex64],
    c: &NormalizedCoeffs,
    cfg: &CompensatorConfig,
    decider: &D,
    layout: &SubcarrierLayout,
    t: &TTable,
) -> (ComplexVec, ComplexVec, usize) {
    let out = compensate_symbol(r_eq, CoeffTracking::Fixed(c), cfg, decider, layout, t);
    (out.decisions, out.r_comp, out.iterations)
}

/// Compensates the data symbols of one burst in order, threading the
/// smoothed coefficients from one symbol to the next. `received` holds the
/// demodulated symbols before equalization.
pub fn compensate_burst<D: Decider + ?Sized>(
    received: &[ComplexVec],
    h_eff: &[Complex64],
    c_init: &NormalizedCoeffs,
    cfg: &CompensatorConfig,
    deciders: &[&D],
    layout: &SubcarrierLayout,
    t: &TTable,
) -> Vec<SymbolOutcome> {
    let mut sm = SmoothedCoeffs::new(c_init.clone());
    received
        .iter()
        .zip(deciders)
        .map(|(r, decider)| {
            let eq = zf_equalize(r, h_eff);
            let tracking = if cfg.update_c {
                CoeffTracking::DecisionDirected { r, h_eff, smoothed: &sm, gamma: cfg.gamma }
            } else {
                CoeffTracking::Fixed(&sm.c_avg)
            };
            let out = compensate_symbol(&eq.r_eq, tracking, cfg, *decider, layout, t);
            if cfg.update_c {
                sm = SmoothedCoeffs { c_avg: out.c_used.clone(), t: sm.t + 1 };
            }
            out
        })
        .collect()
}

/// Writes `symbol_idx,iter,n_changed_decisions,residual_power` rows.
pub fn write_diagnostics_csv<W: Write>(writer: W, outcomes: &[SymbolOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["symbol_idx", "iter", "n_changed_decisions", "residual_power"]).map_err(io)?;
    for (idx, out) in outcomes.iter().enumerate() {
        for d in &out.diagnostics {
            w.write_record([
                idx.to_string(),
                d.iter.to_string(),
                d.n_changed_decisions.to_string(),
                format!("{:e}", d.residual_power),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{complex_gaussian, RngStream};
    use crate::nld::{alpha_with_table, apply_pa_frequency_domain, c_from_betas};
    use crate::pa::PaPolynomial;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    /// 64-QAM on 52 subcarriers through a cubic-plus-quintic PA, expressed
    /// by its betas; the scale puts the distortion around -20 dB.
    struct Setup {
        layout: SubcarrierLayout,
        con: Constellation,
        t: TTable,
        pa: PaPolynomial,
        alpha: Complex64,
        c_true: NormalizedCoeffs,
    }

    fn setup() -> Setup {
        let layout = SubcarrierLayout::centered(52, true);
        let con = Constellation::qam(64).unwrap();
        let t = TTable::for_constellation(52, &con, 5).unwrap();
        let drive = 1.0 / (52.0 * con.e2());
        let pa = PaPolynomial::new(vec![c(1.0, 0.0), c(-0.08 * drive, 0.02 * drive), c(0.004 * drive * drive, 0.0)])
            .unwrap();
        let alpha = alpha_with_table(&pa, &t);
        let c_true = c_from_betas(&pa, alpha).unwrap();
        Setup { layout, con, t, pa, alpha, c_true }
    }

    fn channel(n: usize, seed: u64) -> ComplexVec {
        let mut rng = RngStream::new(seed, 1).rng();
        (0..n).map(|_| complex_gaussian(&mut rng, 1.0) + c(0.5, 0.0)).collect()
    }

    #[test]
    fn zf_trivial_cases() {
        let r = vec![c(1.0, 2.0), c(-3.0, 0.5), c(0.0, -1.0)];
        let ones = vec![c(1.0, 0.0); 3];
        assert_eq!(zf_equalize(&r, &ones).r_eq, r);
        let h = channel(3, 1);
        let s = vec![c(1.0, 1.0), c(-3.0, 1.0), c(5.0, -7.0)];
        let rx: ComplexVec = s.iter().zip(&h).map(|(s, h)| s * h).collect();
        let eq = zf_equalize(&rx, &h);
        assert!(rel_err(&eq.r_eq, &s) < 1e-14);
        assert!(eq.erased.iter().all(|e| !e));
    }

    #[test]
    fn zf_flags_vanishing_subcarriers() {
        let h = vec![c(1.0, 0.0), c(1e-9, 0.0), c(0.0, 0.0)];
        let eq = zf_equalize(&[c(1.0, 0.0); 3], &h);
        assert_eq!(eq.erased, vec![false, true, true]);
        assert_eq!(eq.r_eq[1], c(0.0, 0.0));
    }

    #[test]
    fn zf_output_matches_forward_model() {
        let st = setup();
        let mut rng = RngStream::new(2, 0).rng();
        let s = st.con.random_symbols(52, &mut rng);
        let h = channel(52, 3);
        let pa_out = apply_pa_frequency_domain(&s, &st.layout, &st.pa);
        let r: ComplexVec = pa_out.iter().zip(&h).map(|(v, h)| v * h).collect();
        let h_eff: ComplexVec = h.iter().map(|h| h * st.alpha).collect();
        let eq = zf_equalize(&r, &h_eff);
        let basis = DistortionBasis::new(&s, &st.layout, &st.t);
        let model: ComplexVec = reconstruct_distortion(&s, &st.c_true, &basis)
            .iter()
            .zip(&s)
            .map(|(d, s)| s + d)
            .collect();
        assert!(rel_err(&eq.r_eq, &model) < 1e-10);
    }

    #[test]
    fn perfect_decisions_cancel_exactly() {
        let st = setup();
        let mut rng = RngStream::new(4, 0).rng();
        let s = st.con.random_symbols(52, &mut rng);
        let r_eq: ComplexVec = apply_pa_frequency_domain(&s, &st.layout, &st.pa)
            .iter()
            .map(|v| v / st.alpha)
            .collect();
        assert!(rel_err(&r_eq, &s) > 1e-3);
        let out = compensate_once(&r_eq, &s, &st.c_true, 1.0, &st.layout, &st.t);
        assert!(rel_err(&out, &s) < 1e-10);
        let zero = NormalizedCoeffs::zeros(5);
        assert_eq!(compensate_once(&r_eq, &s, &zero, 1.0, &st.layout, &st.t), r_eq);
    }

    proptest! {
        #[test]
        fn compensation_is_linear_in_mu_and_c(
            seed in 0u64..1000,
            mu in 0.05f64..1.0,
            scale in prop::sample::select(vec![-2.0f64, 0.5, 3.0]),
        ) {
            let st = setup();
            let mut rng = RngStream::new(seed, 5).rng();
            let s = st.con.random_symbols(52, &mut rng);
            let r_eq: ComplexVec = (0..52).map(|_| complex_gaussian(&mut rng, 42.0)).collect();
            let full = compensate_once(&r_eq, &s, &st.c_true, 1.0, &st.layout, &st.t);
            let part = compensate_once(&r_eq, &s, &st.c_true, mu, &st.layout, &st.t);
            let scaled_c = NormalizedCoeffs::new(st.c_true.as_slice().iter().map(|v| v * scale).collect());
            let scaled = compensate_once(&r_eq, &s, &scaled_c, 1.0, &st.layout, &st.t);
            for k in 0..52 {
                let term = r_eq[k] - full[k];
                prop_assert!(((r_eq[k] - part[k]) - term * mu).norm() <= 1e-9 * term.norm().max(1e-12));
                prop_assert!(((r_eq[k] - scaled[k]) - term * scale).norm() <= 1e-9 * term.norm().max(1e-12));
            }
        }
    }

    #[test]
    fn linear_data_stops_after_one_iteration() {
        let con = Constellation::qam(16).unwrap();
        let layout = SubcarrierLayout::centered(52, true);
        let t = TTable::for_constellation(52, &con, 5).unwrap();
        let mut rng = RngStream::new(6, 0).rng();
        let s = con.random_symbols(52, &mut rng);
        let r_eq: ComplexVec = s.iter().map(|v| v + complex_gaussian(&mut rng, 0.3)).collect();
        let cfg = CompensatorConfig::default().resolved(52).unwrap();
        let (dec, r_comp, n) = iterate(&r_eq, &NormalizedCoeffs::zeros(5), &cfg, &Slicer(&con), &layout, &t);
        assert_eq!(n, 1);
        assert_eq!(dec, con.slice_hard(&r_eq));
        assert_eq!(r_comp, r_eq);
    }

    #[test]
    fn damping_schedule_defaults_and_validation() {
        assert_eq!(CompensatorConfig::default().resolved(52).unwrap().damping, vec![0.75, 1.0]);
        assert_eq!(CompensatorConfig::default().resolved(484).unwrap().damping, vec![1.0]);
        let cfg = CompensatorConfig { damping: vec![0.5, 0.75], ..Default::default() };
        assert_eq!([cfg.mu(1), cfg.mu(2), cfg.mu(7)], [0.5, 0.75, 0.75]);
        for bad in [vec![1.0, 0.5], vec![0.0], vec![1.2]] {
            let cfg = CompensatorConfig { damping: bad, ..Default::default() };
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
        let cfg = CompensatorConfig { gamma: 0.0, damping: vec![1.0], ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    /// Symbols whose ZF decisions contain errors caused by the distortion:
    /// with the true coefficients the loop reaches a fixed point within three
    /// iterations and makes fewer symbol errors than the plain slicer.
    #[test]
    fn iterations_reduce_symbol_errors() {
        let st = setup();
        let pa = PaPolynomial::new(vec![c(1.0, 0.0), st.pa.beta(3) * 1.5, st.pa.beta(5) * 1.5]).unwrap();
        let alpha = alpha_with_table(&pa, &st.t);
        let c_true = c_from_betas(&pa, alpha).unwrap();
        let cfg = CompensatorConfig { damping: vec![1.0], ..Default::default() };
        let mut rng = RngStream::new(7, 0).rng();
        let (mut err0, mut err_final, mut max_iters) = (0, 0, 0);
        for _ in 0..200 {
            let s = st.con.random_symbols(52, &mut rng);
            let r_eq: ComplexVec = apply_pa_frequency_domain(&s, &st.layout, &pa)
                .iter()
                .map(|v| v / alpha + complex_gaussian(&mut rng, 1e-4))
                .collect();
            let zf = st.con.slice_hard(&r_eq);
            let (dec, _, n) = iterate(&r_eq, &c_true, &cfg, &Slicer(&st.con), &st.layout, &st.t);
            err0 += zf.iter().zip(&s).filter(|(a, b)| a != b).count();
            err_final += dec.iter().zip(&s).filter(|(a, b)| a != b).count();
            if dec == s {
                max_iters = max_iters.max(n);
            }
        }
        assert!(err0 > 50, "setup too clean: {err0} errors");
        assert!(err_final * 2 < err0, "{err_final} vs {err0}");
        assert!(max_iters <= 3, "fixed point after {max_iters} iterations");
    }

    #[test]
    fn fixed_point_is_idempotent() {
        let st = setup();
        let cfg = CompensatorConfig { damping: vec![1.0], ..Default::default() };
        let mut rng = RngStream::new(8, 0).rng();
        for _ in 0..20 {
            let s = st.con.random_symbols(52, &mut rng);
            let r_eq: ComplexVec = apply_pa_frequency_domain(&s, &st.layout, &st.pa)
                .iter()
                .map(|v| v / st.alpha + complex_gaussian(&mut rng, 0.05))
                .collect();
            let out = compensate_symbol(&r_eq, CoeffTracking::Fixed(&st.c_true), &cfg, &Slicer(&st.con), &st.layout, &st.t);
            if out.iterations < cfg.max_iters {
                let again = compensate_once(&r_eq, &out.decisions, &st.c_true, 1.0, &st.layout, &st.t);
                assert_eq!(st.con.slice_hard(&again), out.decisions);
                assert_eq!(again, out.r_comp);
            }
            assert_eq!(out.snapshots.len(), cfg.max_iters + 1);
            assert_eq!(out.diagnostics.len(), out.iterations + 1);
        }
    }

    #[test]
    fn gamma_one_has_no_memory() {
        let st = setup();
        let mut rng = RngStream::new(9, 0).rng();
        let s = st.con.random_symbols(52, &mut rng);
        let h = channel(52, 10);
        let r: ComplexVec = apply_pa_frequency_domain(&s, &st.layout, &st.pa)
            .iter()
            .zip(&h)
            .map(|(v, h)| v * h)
            .collect();
        let h_eff: ComplexVec = h.iter().map(|h| h * st.alpha).collect();
        let sm = SmoothedCoeffs::new(NormalizedCoeffs::new(vec![c(1.0, 1.0), c(2.0, 0.0)]));
        let next = update_c_decision_directed(&r, &h_eff, &s, &sm, 1.0, &st.layout, &st.t);
        let direct = estimate_c_from_decisions(&r, &h_eff, &s, &st.layout, &st.t).unwrap();
        assert_eq!(next.c_avg, direct);
        assert_eq!(next.t, 1);
        for (a, b) in direct.as_slice().iter().zip(st.c_true.as_slice()) {
            assert!((a - b).norm() < 1e-8 * b.norm());
        }
    }

    #[test]
    fn smoothing_converges_geometrically() {
        let st = setup();
        let gamma = 0.25;
        let h = channel(52, 11);
        let h_eff: ComplexVec = h.iter().map(|h| h * st.alpha).collect();
        let mut sm = SmoothedCoeffs::new(NormalizedCoeffs::zeros(5));
        let err = |sm: &SmoothedCoeffs| rel_err(sm.c_avg.as_slice(), st.c_true.as_slice());
        let mut prev = err(&sm);
        let mut rng = RngStream::new(12, 0).rng();
        for _ in 0..12 {
            let s = st.con.random_symbols(52, &mut rng);
            let r: ComplexVec = apply_pa_frequency_domain(&s, &st.layout, &st.pa)
                .iter()
                .zip(&h)
                .map(|(v, h)| v * h)
                .collect();
            sm = update_c_decision_directed(&r, &h_eff, &s, &sm, gamma, &st.layout, &st.t);
            let e = err(&sm);
            assert!((e / prev - (1.0 - gamma)).abs() < 1e-6, "ratio {}", e / prev);
            prev = e;
        }
    }

    #[test]
    fn rank_deficient_update_keeps_average() {
        let st = setup();
        let sm = SmoothedCoeffs::new(st.c_true.clone());
        let zeros = vec![c(0.0, 0.0); 52];
        let h = vec![c(1.0, 0.0); 52];
        let next = update_c_decision_directed(&zeros, &h, &zeros, &sm, 0.25, &st.layout, &st.t);
        assert_eq!(next.c_avg, st.c_true);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn ideal_decider_returns_truth() {
        let s = vec![c(1.0, -1.0), c(3.0, 3.0)];
        assert_eq!(IdealDecisions(&s).decide(&[c(9.0, 9.0), c(0.0, 0.0)]), s);
    }

    #[test]
    fn burst_threads_smoothed_coefficients() {
        let st = setup();
        let h = channel(52, 13);
        let h_eff: ComplexVec = h.iter().map(|h| h * st.alpha).collect();
        let mut rng = RngStream::new(14, 0).rng();
        let syms: Vec<ComplexVec> = (0..4).map(|_| st.con.random_symbols(52, &mut rng)).collect();
        let rx: Vec<ComplexVec> = syms
            .iter()
            .map(|s| {
                apply_pa_frequency_domain(s, &st.layout, &st.pa)
                    .iter()
                    .zip(&h)
                    .map(|(v, h)| v * h)
                    .collect()
            })
            .collect();
        let ideal: Vec<IdealDecisions> = syms.iter().map(|s| IdealDecisions(s)).collect();
        let refs: Vec<&IdealDecisions> = ideal.iter().collect();
        let cfg = CompensatorConfig { damping: vec![1.0], gamma: 1.0, ..Default::default() };
        let outs = compensate_burst(&rx, &h_eff, &NormalizedCoeffs::zeros(5), &cfg, &refs, &st.layout, &st.t);
        for (out, s) in outs.iter().zip(&syms) {
            assert!(rel_err(&out.r_comp, s) < 1e-8);
        }
        let mut buf = Vec::new();
        write_diagnostics_csv(&mut buf, &outs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("symbol_idx,iter,n_changed_decisions,residual_power\n"));
        assert_eq!(text.lines().count(), 1 + outs.iter().map(|o| o.diagnostics.len()).sum::<usize>());
    }
}
