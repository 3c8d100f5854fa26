//! Monte Carlo experiments over the complete link: payload bits, coding,
//! interleaving, mapping, training, OFDM modulation, PA at a calibrated
//! back-off, block-fading channel, noise, and one or more receivers.
//!
//! Every packet owns a random stream derived from `(seed, packet index)`, so
//! results do not depend on thread count or scheduling, all receivers of a
//! run see the same packets, and successive SNR points reuse the same
//! payloads, channels and noise shapes.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{awgn, draw_multipath, ChannelProfile, NoiseSpec, ProfileTable};
use crate::compensator::{
    compensate_burst, compensate_once, zf_equalize, CompensatorConfig, Decider, DecisionSource, IdealDecisions,
    Slicer, SymbolOutcome,
};
use crate::constellation::{Constellation, ConstellationKind};
use crate::dsp::{ComplexVec, RngStream};
use crate::estimator::{
    channel_nmse, estimate_c_given_h, joint_estimate, ls_channel, EstimatorConfig, TrainingObservation,
};
use crate::fec::{encode, viterbi_decode, hard_metrics, CodeRate, Interleaver, PacketLayout};
use crate::nld::{NormalizedCoeffs, TTable};
use crate::ofdm::{demodulate, fixed_training_symbol, modulate, OfdmConfig};
use crate::pa::{drive_for_obo, PaModel, PaPolynomial, RappParams};
use crate::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Recorded in every manifest.
pub const SNR_DEFINITION: &str = "SNR = mean |S'_k|^2 / sigma_w^2, where S'_k are the demodulated active-subcarrier \
     data values at the PA output (before the channel) and sigma_w^2 is the noise variance per demodulated subcarrier";

/// Stream used for drive and signal-power calibration, disjoint from packets.
const CALIBRATION_STREAM: u64 = u64::MAX;
const CALIBRATION_SYMBOLS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// 52 subcarriers, 64-point FFT.
    Legacy52,
    /// 120 subcarriers, 128-point FFT.
    N120,
    /// 484 subcarriers, 512-point FFT.
    Vht484,
    /// Dimensions from `[custom]`.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CustomMode {
    pub n_active: usize,
    pub n_fft: usize,
    pub cp_len: usize,
    pub dc_null: bool,
}

impl Default for CustomMode {
    fn default() -> Self {
        CustomMode { n_active: 52, n_fft: 64, cp_len: 16, dc_null: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationSpec {
    pub kind: ConstellationKind,
    pub order: usize,
}

impl ConstellationSpec {
    pub fn build(&self) -> Result<Constellation> {
        Constellation::new(self.kind, self.order)
    }
}

/// Amplifier description in the run configuration. Polynomial coefficients
/// act on time-domain samples, `[re, im]` per odd order starting at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase", deny_unknown_fields)]
pub enum PaSpec {
    None,
    Rapp { a_sat: f64, v: f64 },
    Polynomial { betas: Vec<[f64; 2]> },
}

impl PaSpec {
    pub fn build(&self) -> Result<PaModel> {
        Ok(match self {
            PaSpec::None => PaModel::Linear,
            PaSpec::Rapp { a_sat, v } => PaModel::Rapp(RappParams::new(*a_sat, *v)?),
            PaSpec::Polynomial { betas } => {
                PaModel::Polynomial(PaPolynomial::new(betas.iter().map(|b| Complex64::new(b[0], b[1])).collect())?)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Receiver {
    /// Least-squares channel, zero-forcing, no compensation.
    LinearLs,
    /// Joint channel / PA-model estimate, then iterative compensation.
    JointNlc,
    /// Least-squares channel, one coefficient solve against it, then
    /// iterative compensation.
    LsNlc,
}

impl Receiver {
    pub fn name(&self) -> &'static str {
        match self {
            Receiver::LinearLs => "linear_ls",
            Receiver::JointNlc => "joint_nlc",
            Receiver::LsNlc => "ls_nlc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub snr_db: f64,
    pub obo_db: Vec<f64>,
    pub trials: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig { snr_db: 20.0, obo_db: vec![6.0, 8.0, 10.0], trials: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MseGainConfig {
    pub snr_db: Vec<f64>,
    pub obo_db: Vec<f64>,
    pub trials: usize,
}

impl Default for MseGainConfig {
    fn default() -> Self {
        MseGainConfig { snr_db: vec![5.0, 15.0, 25.0], obo_db: vec![6.0, 9.0, 12.0], trials: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdealFeedbackConfig {
    /// Smoothing factor of the heavily averaged variant.
    pub averaged_gamma: f64,
}

impl Default for IdealFeedbackConfig {
    fn default() -> Self {
        IdealFeedbackConfig { averaged_gamma: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub mode: Mode,
    pub custom: CustomMode,
    /// Simulation samples per FFT-rate sample.
    pub oversample: usize,
    pub constellation: ConstellationSpec,
    pub code_rate: CodeRate,
    pub payload_bytes: usize,
    /// Soft (Euclidean) Viterbi metrics; hard decisions otherwise.
    pub soft_decisions: bool,
    pub training_symbols: usize,
    pub pa: PaSpec,
    pub obo_db: f64,
    pub channel: ChannelProfile,
    pub profiles: ProfileTable,
    pub snr_db: Vec<f64>,
    pub packets: usize,
    pub receivers: Vec<Receiver>,
    pub estimator: EstimatorConfig,
    pub compensator: CompensatorConfig,
    pub convergence: ConvergenceConfig,
    pub mse_gain: MseGainConfig,
    pub ideal_feedback: IdealFeedbackConfig,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mode: Mode::Legacy52,
            custom: CustomMode::default(),
            oversample: 4,
            constellation: ConstellationSpec { kind: ConstellationKind::Qam, order: 64 },
            code_rate: CodeRate::ThreeQuarters,
            payload_bytes: 400,
            soft_decisions: true,
            training_symbols: 2,
            pa: PaSpec::Rapp { a_sat: 1.0, v: 2.0 },
            obo_db: 8.5,
            channel: ChannelProfile::Flat,
            profiles: ProfileTable::default(),
            snr_db: vec![16.0, 18.0, 20.0, 22.0, 24.0, 26.0],
            packets: 5000,
            receivers: vec![Receiver::LinearLs, Receiver::JointNlc],
            estimator: EstimatorConfig::default(),
            compensator: CompensatorConfig::default(),
            convergence: ConvergenceConfig::default(),
            mse_gain: MseGainConfig::default(),
            ideal_feedback: IdealFeedbackConfig::default(),
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the serialized configuration, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml_string()?.as_bytes());
        Ok(digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
    }

    pub fn ofdm(&self) -> Result<OfdmConfig> {
        let (n, fft, cp, dc) = match self.mode {
            Mode::Legacy52 => (52, 64, 16, true),
            Mode::N120 => (120, 128, 32, true),
            Mode::Vht484 => (484, 512, 128, true),
            Mode::Custom => (self.custom.n_active, self.custom.n_fft, self.custom.cp_len, self.custom.dc_null),
        };
        OfdmConfig::new(n, fft, cp, self.oversample, dc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.packets == 0 || self.payload_bytes == 0 {
            return Err(Error::Config("packets and payload_bytes must be positive".into()));
        }
        if self.training_symbols < 2 {
            return Err(Error::Config("at least two training symbols are required".into()));
        }
        if self.snr_db.is_empty() || self.receivers.is_empty() {
            return Err(Error::Config("snr_db and receivers must not be empty".into()));
        }
        self.profiles.validate(&self.ofdm()?)?;
        self.compensator.resolved(self.ofdm()?.n_active())?;
        Ok(())
    }
}

/// Data-parallel or sequential execution of independent trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Parallel when the `parallel` feature is enabled, sequential otherwise.
    #[default]
    Parallel,
    Sequential,
}

/// `f(0), .., f(n - 1)` in index order.
pub fn map_trials<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Transmitter, PA operating point and receiver constants for one back-off.
#[derive(Debug, Clone)]
pub struct Link {
    pub ofdm: OfdmConfig,
    pub con: Constellation,
    pub pa: PaModel,
    /// Mean PA input power (unit-power OFDM samples are scaled by its root).
    pub input_power: f64,
    /// Back-off label: the target, or infinity for a linear PA.
    pub obo_db: f64,
    /// Mean demodulated data power at the PA output; the SNR reference.
    pub signal_power: f64,
    pub t: TTable,
    pub packet: PacketLayout,
    pub interleaver: Interleaver,
    pub channel: ChannelProfile,
    pub profiles: ProfileTable,
    pub training_symbols: usize,
    pub soft_decisions: bool,
}

/// One transmitted packet as seen by the receivers.
#[derive(Debug, Clone)]
pub struct Packet {
    pub payload: Vec<u8>,
    /// Payload followed by random pad bits, the input of the encoder.
    pub info: Vec<u8>,
    pub training: Vec<ComplexVec>,
    pub data: Vec<ComplexVec>,
    pub h_true: ComplexVec,
    pub rx_training: Vec<ComplexVec>,
    pub rx_data: Vec<ComplexVec>,
}

impl Link {
    pub fn new(sim: &SimConfig, obo_db: f64) -> Result<Self> {
        let con = sim.constellation.build()?;
        let ofdm = sim.ofdm()?.with_unit_power(con.e2());
        let pa = sim.pa.build()?;
        let (input_power, obo_label) = match pa {
            PaModel::Linear => (1.0, f64::INFINITY),
            _ => (drive_for_obo(&pa, obo_db)?, obo_db),
        };
        let n = ofdm.n_active();
        let t = TTable::for_constellation(n, &con, sim.estimator.p_max)?;
        let n_cbps = n * con.bits_per_symbol();
        let packet = PacketLayout::new(8 * sim.payload_bytes, n_cbps, sim.code_rate)?;
        let interleaver = Interleaver::new(n_cbps, con.bits_per_symbol())?;
        sim.profiles.validate(&ofdm)?;
        let mut link = Link {
            ofdm,
            con,
            pa,
            input_power,
            obo_db: obo_label,
            signal_power: 0.0,
            t,
            packet,
            interleaver,
            channel: sim.channel,
            profiles: sim.profiles,
            training_symbols: sim.training_symbols,
            soft_decisions: sim.soft_decisions,
        };
        let mut rng = RngStream::new(sim.seed, CALIBRATION_STREAM).rng();
        let mut acc = 0.0;
        for _ in 0..CALIBRATION_SYMBOLS {
            let s = link.con.random_symbols(n, &mut rng);
            let y = link.pa_output(&s);
            acc += demodulate(&y, &link.ofdm)?.iter().map(|v| v.norm_sqr()).sum::<f64>();
        }
        link.signal_power = acc / (CALIBRATION_SYMBOLS * n) as f64;
        Ok(link)
    }

    fn pa_output(&self, s: &[Complex64]) -> ComplexVec {
        let a = self.input_power.sqrt();
        let z: ComplexVec = modulate(s, &self.ofdm).iter().map(|v| v * a).collect();
        self.pa.apply(&z)
    }

    pub fn n_active(&self) -> usize {
        self.ofdm.n_active()
    }

    /// Training symbols at the data constellation's mean amplitude.
    pub fn training<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<ComplexVec> {
        let n = self.n_active();
        let a = self.con.e2().sqrt();
        let mut out = vec![fixed_training_symbol(n)];
        while out.len() < self.training_symbols {
            let cand: ComplexVec =
                (0..n).map(|_| Complex64::new(if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0)).collect();
            if out.iter().all(|t| t.iter().zip(&cand).filter(|(x, y)| x != y).count() * 4 >= n) {
                out.push(cand);
            }
        }
        out.iter().map(|s| s.iter().map(|v| v * a).collect()).collect()
    }

    /// Info bits (payload and zero pad) to data symbols.
    pub fn map_payload(&self, info: &[u8]) -> Result<Vec<ComplexVec>> {
        let coded = encode(info, self.packet.rate);
        coded
            .chunks(self.packet.n_cbps)
            .map(|block| self.con.map_bits(&self.interleaver.interleave(block)?))
            .collect()
    }

    /// Draws payload, training, channel and noise for packet `idx`.
    pub fn transmit(&self, seed: u64, idx: usize, snr_db: f64, with_data: bool) -> Result<Packet> {
        let mut rng = RngStream::new(seed, 0).substream(idx as u64).rng();
        // Random padding: a long run of constant bits would map to one
        // repeated point and an impulsive, heavily clipped OFDM symbol.
        let info: Vec<u8> = (0..self.packet.info_bits()).map(|_| rng.random::<bool>() as u8).collect();
        let payload = info[..self.packet.payload_bits].to_vec();
        let training = self.training(&mut rng);
        let data = if with_data { self.map_payload(&info)? } else { Vec::new() };
        let channel = draw_multipath(self.channel, &self.profiles, &self.ofdm, &mut rng);
        let noise = NoiseSpec::new(snr_db, self.signal_power).sample_variance(&self.ofdm);
        let mut rx = Vec::with_capacity(training.len() + data.len());
        for s in training.iter().chain(&data) {
            let y = channel.apply(&self.pa_output(s), self.ofdm.oversample);
            rx.push(demodulate(&awgn(&y, noise, &mut rng), &self.ofdm)?);
        }
        let rx_data = rx.split_off(training.len());
        Ok(Packet { payload, info, training, data, h_true: channel.h_freq, rx_training: rx, rx_data })
    }

    pub fn observation(&self, pkt: &Packet) -> Result<TrainingObservation> {
        TrainingObservation::new(pkt.rx_training.clone(), pkt.training.clone(), &self.ofdm.layout, &self.t)
    }

    /// Channel and initial coefficients of a receiver.
    pub fn front_end(
        &self,
        obs: &TrainingObservation,
        receiver: Receiver,
        est: &EstimatorConfig,
    ) -> (ComplexVec, NormalizedCoeffs) {
        let zeros = NormalizedCoeffs::zeros(est.p_max);
        match receiver {
            Receiver::LinearLs => (ls_channel(obs), zeros),
            Receiver::LsNlc => {
                let h = ls_channel(obs);
                let c = estimate_c_given_h(obs, &h).unwrap_or(zeros);
                (h, c)
            }
            Receiver::JointNlc => match joint_estimate(obs, est) {
                Ok(state) => (state.h_eff, state.c_hat),
                Err(_) => (ls_channel(obs), zeros),
            },
        }
    }

    /// Info bits (payload and pad) decoded from compensated data symbols.
    pub fn decode(&self, symbols: &[ComplexVec], h_eff: &[Complex64], erased: &[bool]) -> Result<Vec<u8>> {
        let mut metrics = Vec::with_capacity(self.packet.coded_bits());
        let mut block = Vec::with_capacity(self.packet.n_cbps);
        for sym in symbols {
            block.clear();
            if self.soft_decisions {
                for ((v, h), e) in sym.iter().zip(h_eff).zip(erased) {
                    let w = if *e { 0.0 } else { h.norm_sqr() };
                    self.con.soft_metrics(*v, w, &mut block);
                }
            } else {
                block.extend(hard_metrics(&self.con.demap_hard(sym)));
                for (k, e) in erased.iter().enumerate() {
                    if *e {
                        let b = self.con.bits_per_symbol();
                        block[k * b..(k + 1) * b].iter_mut().for_each(|m| *m = 0.0);
                    }
                }
            }
            metrics.extend(self.interleaver.deinterleave(&block)?);
        }
        viterbi_decode(&metrics, self.packet.rate, self.packet.info_bits())
    }
}

/// A receiver with its compensator settings and a label for the output.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverSpec {
    pub label: String,
    pub receiver: Receiver,
    pub compensator: CompensatorConfig,
    /// Genie decisions instead of the slicer.
    pub ideal: bool,
}

impl ReceiverSpec {
    pub fn new(receiver: Receiver, compensator: &CompensatorConfig) -> Self {
        ReceiverSpec { label: receiver.name().to_string(), receiver, compensator: compensator.clone(), ideal: false }
    }

    /// Rows reported: iterations `0..=max_iters`, plus one for the decoder
    /// feedback pass. The linear receiver reports iteration 0 only.
    fn n_rows(&self) -> usize {
        match self.receiver {
            Receiver::LinearLs => 1,
            _ => {
                self.compensator.max_iters
                    + 1
                    + usize::from(self.compensator.decision_source == DecisionSource::Fec)
            }
        }
    }
}

/// Per-packet outcome of one receiver: bit errors per reported iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketTally {
    pub bit_errors: Vec<u64>,
    pub channel_mse: f64,
}

/// Differences over the length of the shorter slice (the payload).
fn count_errors(a: &[u8], b: &[u8]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64
}

/// Runs one receiver on one packet.
pub fn receive(link: &Link, pkt: &Packet, spec: &ReceiverSpec, est: &EstimatorConfig) -> Result<PacketTally> {
    let obs = link.observation(pkt)?;
    let (h, c_init) = link.front_end(&obs, spec.receiver, est);
    let channel_mse = channel_nmse(&h, &pkt.h_true);
    let eq: Vec<_> = pkt.rx_data.iter().map(|r| zf_equalize(r, &h)).collect();
    let erased = &eq[0].erased;
    if spec.receiver == Receiver::LinearLs {
        let r_eq: Vec<ComplexVec> = eq.iter().map(|e| e.r_eq.clone()).collect();
        let bits = link.decode(&r_eq, &h, erased)?;
        return Ok(PacketTally { bit_errors: vec![count_errors(&bits, &pkt.payload)], channel_mse });
    }
    let cfg = spec.compensator.resolved(link.n_active())?;
    let slicer = Slicer(&link.con);
    let ideal: Vec<IdealDecisions> = pkt.data.iter().map(|s| IdealDecisions(s)).collect();
    let deciders: Vec<&dyn Decider> = if spec.ideal {
        ideal.iter().map(|d| d as &dyn Decider).collect()
    } else {
        pkt.data.iter().map(|_| &slicer as &dyn Decider).collect()
    };
    let outs: Vec<SymbolOutcome> =
        compensate_burst(&pkt.rx_data, &h, &c_init, &cfg, &deciders, &link.ofdm.layout, &link.t);
    let mut bit_errors = Vec::with_capacity(spec.n_rows());
    let mut last = Vec::new();
    for i in 0..=cfg.max_iters {
        let snap: Vec<ComplexVec> = outs.iter().map(|o| o.snapshots[i].clone()).collect();
        last = link.decode(&snap, &h, erased)?;
        bit_errors.push(count_errors(&last, &pkt.payload));
    }
    if cfg.decision_source == DecisionSource::Fec {
        let fed_back = link.map_payload(&last)?;
        let mu = cfg.mu(cfg.max_iters + 1);
        let comp: Vec<ComplexVec> = eq
            .iter()
            .zip(&fed_back)
            .zip(&outs)
            .map(|((e, s), o)| compensate_once(&e.r_eq, s, &o.c_used, mu, &link.ofdm.layout, &link.t))
            .collect();
        let bits = link.decode(&comp, &h, erased)?;
        bit_errors.push(count_errors(&bits, &pkt.payload));
    }
    Ok(PacketTally { bit_errors, channel_mse })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub obo_db: f64,
    pub receiver: String,
    pub iterations: usize,
    pub ber: f64,
    pub per: f64,
    pub n_bits: u64,
    pub n_packets: u64,
    pub bit_errors: u64,
    pub packet_errors: u64,
    pub channel_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub snr_db: f64,
    pub obo_db: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub timing: Vec<TimingRow>,
}

impl SweepResult {
    /// Rows of one receiver label at one iteration count, in SNR order.
    pub fn curve(&self, receiver: &str, iterations: usize) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.receiver == receiver && r.iterations == iterations).collect()
    }
}

/// Runs the given receivers over the SNR grid of `sim` on shared packets.
pub fn run_receivers(sim: &SimConfig, specs: &[ReceiverSpec], exec: Execution) -> Result<SweepResult> {
    sim.validate()?;
    let link = Link::new(sim, sim.obo_db)?;
    let payload_bits = link.packet.payload_bits as u64;
    let mut result = SweepResult::default();
    for &snr in &sim.snr_db {
        let start = Instant::now();
        let tallies = map_trials(sim.packets, exec, |p| -> Result<Vec<PacketTally>> {
            let pkt = link.transmit(sim.seed, p, snr, true)?;
            specs.iter().map(|s| receive(&link, &pkt, s, &sim.estimator)).collect()
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        for (j, spec) in specs.iter().enumerate() {
            let mse = tallies.iter().map(|t| t[j].channel_mse).sum::<f64>() / sim.packets as f64;
            for i in 0..spec.n_rows() {
                let bit_errors: u64 = tallies.iter().map(|t| t[j].bit_errors[i]).sum();
                let packet_errors = tallies.iter().filter(|t| t[j].bit_errors[i] > 0).count() as u64;
                let n_bits = payload_bits * sim.packets as u64;
                result.rows.push(SweepRow {
                    snr_db: snr,
                    obo_db: link.obo_db,
                    receiver: spec.label.clone(),
                    iterations: i,
                    ber: bit_errors as f64 / n_bits as f64,
                    per: packet_errors as f64 / sim.packets as f64,
                    n_bits,
                    n_packets: sim.packets as u64,
                    bit_errors,
                    packet_errors,
                    channel_mse: mse,
                });
            }
        }
        result.timing.push(TimingRow { snr_db: snr, obo_db: link.obo_db, wall_seconds: start.elapsed().as_secs_f64() });
    }
    Ok(result)
}

/// BER/PER sweep for the configured receivers.
pub fn run_sweep(sim: &SimConfig, exec: Execution) -> Result<SweepResult> {
    let specs: Vec<ReceiverSpec> = sim.receivers.iter().map(|r| ReceiverSpec::new(*r, &sim.compensator)).collect();
    run_receivers(sim, &specs, exec)
}

/// Labels of the two ideal-feedback variants.
pub const IDEAL_AVERAGED: &str = "ideal_averaged";
pub const IDEAL_PER_SYMBOL: &str = "ideal_per_symbol";

/// Joint receiver fed the transmitted symbols as decisions, once with
/// heavily averaged coefficients and once re-estimated per symbol.
pub fn run_ideal_feedback(sim: &SimConfig, exec: Execution) -> Result<SweepResult> {
    let variant = |label: &str, gamma: f64| ReceiverSpec {
        label: label.to_string(),
        receiver: Receiver::JointNlc,
        compensator: CompensatorConfig {
            gamma,
            update_c: true,
            decision_source: DecisionSource::Slicer,
            ..sim.compensator.clone()
        },
        ideal: true,
    };
    let specs = [
        variant(IDEAL_AVERAGED, sim.ideal_feedback.averaged_gamma),
        variant(IDEAL_PER_SYMBOL, 1.0),
    ];
    run_receivers(sim, &specs, exec)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub obo_db: f64,
    pub iter: usize,
    pub mean_j: f64,
    /// `mean_j / mean_j(iteration 0)`.
    pub rel_j: f64,
}

/// Mean error function per joint-estimator iteration over random training
/// bursts, at every back-off of `sim.convergence`. Runs that stop early are
/// held at their final value.
pub fn run_convergence(sim: &SimConfig, exec: Execution) -> Result<Vec<ConvergenceRow>> {
    let cc = &sim.convergence;
    if cc.trials == 0 {
        return Err(Error::Config("convergence.trials must be positive".into()));
    }
    let len = sim.estimator.max_iters + 1;
    let mut rows = Vec::new();
    for &obo in &cc.obo_db {
        let link = Link::new(sim, obo)?;
        let histories = map_trials(cc.trials, exec, |t| -> Result<Vec<f64>> {
            let pkt = link.transmit(sim.seed, t, cc.snr_db, false)?;
            let state = joint_estimate(&link.observation(&pkt)?, &sim.estimator)?;
            let mut j = state.j_history;
            let last = *j.last().expect("history has J0");
            j.resize(len, last);
            Ok(j)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let mean: Vec<f64> =
            (0..len).map(|i| histories.iter().map(|h| h[i]).sum::<f64>() / cc.trials as f64).collect();
        for (i, m) in mean.iter().enumerate() {
            rows.push(ConvergenceRow { obo_db: link.obo_db, iter: i, mean_j: *m, rel_j: m / mean[0] });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseGainRow {
    pub snr_db: f64,
    pub obo_db: f64,
    pub mse_joint: f64,
    pub mse_ls: f64,
    pub gain_db: f64,
    /// Half-width of the 95% confidence interval of `gain_db` from the
    /// paired trials (delta method on the ratio of means).
    pub gain_ci95_db: f64,
}

/// Channel-estimate error of the joint estimator against plain least
/// squares on the same bursts. Both are scalar-aligned normalized errors
/// against the true frequency response, averaged over trials.
pub fn run_mse_gain(sim: &SimConfig, exec: Execution) -> Result<Vec<MseGainRow>> {
    let mc = &sim.mse_gain;
    if mc.trials == 0 {
        return Err(Error::Config("mse_gain.trials must be positive".into()));
    }
    let mut rows = Vec::new();
    for &obo in &mc.obo_db {
        let link = Link::new(sim, obo)?;
        for &snr in &mc.snr_db {
            let pairs = map_trials(mc.trials, exec, |t| -> Result<(f64, f64)> {
                let pkt = link.transmit(sim.seed, t, snr, false)?;
                let obs = link.observation(&pkt)?;
                let (h_joint, _) = link.front_end(&obs, Receiver::JointNlc, &sim.estimator);
                Ok((channel_nmse(&h_joint, &pkt.h_true), channel_nmse(&ls_channel(&obs), &pkt.h_true)))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let n = mc.trials as f64;
            let mse_joint = pairs.iter().map(|p| p.0).sum::<f64>() / n;
            let mse_ls = pairs.iter().map(|p| p.1).sum::<f64>() / n;
            // log ratio linearized per trial: x_ls / m_ls - x_joint / m_joint
            let lin: Vec<f64> = pairs.iter().map(|p| p.1 / mse_ls - p.0 / mse_joint).collect();
            let var = lin.iter().map(|v| v * v).sum::<f64>() / (n - 1.0).max(1.0);
            rows.push(MseGainRow {
                snr_db: snr,
                obo_db: link.obo_db,
                mse_joint,
                mse_ls,
                gain_db: 10.0 * (mse_ls / mse_joint).log10(),
                gain_ci95_db: 1.96 * 10.0 / std::f64::consts::LN_10 * (var / n).sqrt(),
            });
        }
    }
    Ok(rows)
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<name>.csv` into `dir`.
pub fn write_csv_file<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(std::fs::File::create(dir.join(format!("{name}.csv")))?, rows)
}

/// `manifest.txt`: experiment, configuration hash, seed, version and the
/// SNR definition, followed by the configuration itself.
pub fn write_manifest(dir: &Path, experiment: &str, sim: &SimConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::fs::File::create(dir.join("manifest.txt"))?;
    writeln!(f, "experiment: {experiment}")?;
    writeln!(f, "config_sha256: {}", sim.hash()?)?;
    writeln!(f, "seed: {}", sim.seed)?;
    writeln!(f, "version: nlofdm {VERSION}")?;
    writeln!(f, "snr_definition: {SNR_DEFINITION}")?;
    writeln!(f, "\n[config]\n{}", sim.to_toml_string()?)?;
    Ok(())
}
