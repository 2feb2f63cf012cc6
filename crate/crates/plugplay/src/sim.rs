//! Monte Carlo simulation of the optical round trip at pulse granularity.
//!
//! Each gated slot is one Bernoulli experiment over the joint behavior of
//! the attenuated pulse, the fiber, the interferometer and two gated
//! avalanche detectors. The model realizes the same physics the closed
//! forms in [`crate::analytic`] approximate, so the two are checked
//! against each other statistically; where they disagree (high mean photon
//! number, strong noise) the simulation is the more exact of the two.
//!
//! What one slot does, in order: the source launches a symbol; an optional
//! channel model (an eavesdropper) transforms it; the pulse survives the
//! line with the thinned Poisson click probability `1 - exp(-mu eta_t
//! eta_d)`; a surviving photon routes to the detector for its bit, except
//! that finite interferometer contrast misroutes it with probability
//! `qber_opt` in matched bases (mismatched bases route uniformly); on top
//! of that each detector may fire on its own from dark noise, backscatter
//! light or an afterpulse. Exactly one firing detector makes a
//! [`DetectionEvent`]; two firing detectors discard the slot.
//!
//! Every event carries a truth tag saying which process caused it. Tags
//! are diagnostics for reports and tests; protocol logic never sees them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::analytic::{effective_rep_rate, TrainSchedule};
use crate::bits::BitSource;
use crate::qubit::{Basis, QuantumSymbol};

/// Errors from model construction and the run entry points.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("{name} out of range: {value}")]
    BadParameter { name: &'static str, value: f64 },
    #[error("operating curve needs at least two points, strictly increasing in both efficiency and noise")]
    BadCurve,
    #[error("efficiency {eta_d} outside the operating curve range [{lo}, {hi}]")]
    OffCurve { eta_d: f64, lo: f64, hi: f64 },
    #[error("backscatter calibration needs a positive baseline noise probability")]
    ZeroBaseline,
}

fn check_fraction(name: &'static str, value: f64) -> Result<(), SimError> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(SimError::BadParameter { name, value })
    }
}

/// Misrouting probability from a finite interferometer extinction ratio,
/// `1 / (1 + 10^(E/10))`. Infinite extinction means perfect routing;
/// zero means the two outputs are indistinguishable.
///
/// # Example
///
/// ```
/// use plugplay::sim::extinction_to_qberopt;
///
/// let q = extinction_to_qberopt(28.6).unwrap();
/// assert!((q - 0.0014).abs() < 1e-4);
/// assert_eq!(extinction_to_qberopt(0.0).unwrap(), 0.5);
/// assert_eq!(extinction_to_qberopt(f64::INFINITY).unwrap(), 0.0);
/// ```
pub fn extinction_to_qberopt(extinction_db: f64) -> Result<f64, SimError> {
    if extinction_db.is_nan() || extinction_db < 0.0 {
        return Err(SimError::BadParameter { name: "extinction_db", value: extinction_db });
    }
    Ok(1.0 / (1.0 + 10f64.powf(extinction_db / 10.0)))
}

/// Source and channel parameters seen by the receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalConfig {
    /// Mean photons per pulse at the attenuator output.
    pub mu: f64,
    /// Channel transmission, from [`crate::analytic::transfer_efficiency`].
    pub eta_t: f64,
    /// Misrouting probability in matched bases.
    pub qber_opt: f64,
}

impl OpticalConfig {
    /// Builds from an extinction ratio in dB.
    pub fn new(mu: f64, eta_t: f64, extinction_db: f64) -> Result<OpticalConfig, SimError> {
        OpticalConfig::with_qber_opt(mu, eta_t, extinction_to_qberopt(extinction_db)?)
    }

    /// Builds from an already-known misrouting probability.
    pub fn with_qber_opt(mu: f64, eta_t: f64, qber_opt: f64) -> Result<OpticalConfig, SimError> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(SimError::BadParameter { name: "mu", value: mu });
        }
        check_fraction("eta_t", eta_t)?;
        check_fraction("qber_opt", qber_opt)?;
        if qber_opt > 0.5 {
            return Err(SimError::BadParameter { name: "qber_opt", value: qber_opt });
        }
        Ok(OpticalConfig { mu, eta_t, qber_opt })
    }

    /// Photon click probability per gate at detector efficiency `eta_d`:
    /// `1 - exp(-mu eta_t eta_d)`.
    pub fn click_probability(&self, eta_d: f64) -> f64 {
        -(-self.mu * self.eta_t * eta_d).exp_m1()
    }
}

/// One measured point of a detector's noise-versus-efficiency trade.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub eta_d: f64,
    pub p_noise: f64,
}

/// A detector's operating curve: noise count probability against quantum
/// efficiency, as swept by the discriminator threshold. Strictly
/// increasing in both coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingCurve {
    points: Vec<OperatingPoint>,
}

impl OperatingCurve {
    pub fn new(points: Vec<OperatingPoint>) -> Result<OperatingCurve, SimError> {
        if points.len() < 2 {
            return Err(SimError::BadCurve);
        }
        for p in &points {
            check_fraction("eta_d", p.eta_d).map_err(|_| SimError::BadCurve)?;
            if !(p.p_noise.is_finite() && p.p_noise > 0.0 && p.p_noise < 1.0) {
                return Err(SimError::BadCurve);
            }
        }
        for w in points.windows(2) {
            if w[1].eta_d <= w[0].eta_d || w[1].p_noise <= w[0].p_noise {
                return Err(SimError::BadCurve);
            }
        }
        Ok(OperatingCurve { points })
    }

    pub fn points(&self) -> &[OperatingPoint] {
        &self.points
    }

    /// Noise probability at `eta_d`, log-linear in noise between the
    /// tabulated points (noise grows roughly exponentially along the
    /// threshold sweep, so straight lines in log space track it well).
    pub fn p_noise_at(&self, eta_d: f64) -> Result<f64, SimError> {
        let lo = self.points.first().unwrap();
        let hi = self.points.last().unwrap();
        if !(eta_d >= lo.eta_d && eta_d <= hi.eta_d) {
            return Err(SimError::OffCurve { eta_d, lo: lo.eta_d, hi: hi.eta_d });
        }
        let right = self.points.iter().position(|p| p.eta_d >= eta_d).unwrap();
        if self.points[right].eta_d == eta_d {
            return Ok(self.points[right].p_noise);
        }
        let a = self.points[right - 1];
        let b = self.points[right];
        let t = (eta_d - a.eta_d) / (b.eta_d - a.eta_d);
        Ok((a.p_noise.ln() + t * (b.p_noise.ln() - a.p_noise.ln())).exp())
    }
}

/// Afterpulsing model: an avalanche in one gate seeds a spurious firing
/// probability `prob` in the next gate, decaying geometrically by `decay`
/// per gate after that.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Afterpulse {
    pub prob: f64,
    pub decay: f64,
}

impl Afterpulse {
    pub fn new(prob: f64, decay: f64) -> Result<Afterpulse, SimError> {
        if !(prob.is_finite() && (0.0..1.0).contains(&prob)) {
            return Err(SimError::BadParameter { name: "afterpulse_prob", value: prob });
        }
        if !(decay.is_finite() && (0.0..1.0).contains(&decay)) {
            return Err(SimError::BadParameter { name: "afterpulse_decay", value: decay });
        }
        Ok(Afterpulse { prob, decay })
    }
}

/// Gated avalanche detector pair.
///
/// Cooled detectors trade noise against efficiency along their operating
/// curve; `eta_d` and `p_noise_per_gate` pin one point of that trade.
/// Afterpulsing is off by default: at the simulated operating temperature
/// the dark count trade makes it negligible, and leaving it on would slow
/// every slot for a nearly-never branch.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub eta_d: f64,
    pub p_noise_per_gate: f64,
    pub gate_width_s: f64,
    pub operating_curve: Option<OperatingCurve>,
    pub afterpulse: Option<Afterpulse>,
}

impl DetectorModel {
    pub fn new(eta_d: f64, p_noise_per_gate: f64, gate_width_s: f64) -> Result<DetectorModel, SimError> {
        check_fraction("eta_d", eta_d)?;
        if !(p_noise_per_gate.is_finite() && (0.0..1.0).contains(&p_noise_per_gate)) {
            return Err(SimError::BadParameter { name: "p_noise_per_gate", value: p_noise_per_gate });
        }
        if !(gate_width_s.is_finite() && gate_width_s > 0.0) {
            return Err(SimError::BadParameter { name: "gate_width_s", value: gate_width_s });
        }
        Ok(DetectorModel {
            eta_d,
            p_noise_per_gate,
            gate_width_s,
            operating_curve: None,
            afterpulse: None,
        })
    }

    pub fn with_curve(mut self, curve: OperatingCurve) -> DetectorModel {
        self.operating_curve = Some(curve);
        self
    }

    pub fn with_afterpulse(mut self, afterpulse: Afterpulse) -> DetectorModel {
        self.afterpulse = Some(afterpulse);
        self
    }

    /// This detector re-biased to a different efficiency, with the noise
    /// probability read off the operating curve.
    pub fn at_operating_point(&self, eta_d: f64) -> Result<DetectorModel, SimError> {
        let curve = self.operating_curve.as_ref().ok_or(SimError::BadCurve)?;
        let p_noise = curve.p_noise_at(eta_d)?;
        Ok(DetectorModel { eta_d, p_noise_per_gate: p_noise, ..self.clone() })
    }
}

/// How many extra overfill pulses the doubling anchor corresponds to: a
/// train this many pulses past storage capacity doubles a noise-dominated
/// QBER.
pub const QBER_DOUBLING_OVERFILL: u32 = 20;

/// Backscatter noise from forward pulses meeting returning pulses on the
/// shared line. Linear in the overlap: every overfill pulse adds the same
/// extra noise probability to every gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackscatterModel {
    pub noise_per_overlapping_pulse: f64,
}

impl BackscatterModel {
    pub fn new(noise_per_overlapping_pulse: f64) -> Result<BackscatterModel, SimError> {
        if !(noise_per_overlapping_pulse.is_finite() && (0.0..1.0).contains(&noise_per_overlapping_pulse)) {
            return Err(SimError::BadParameter {
                name: "noise_per_overlapping_pulse",
                value: noise_per_overlapping_pulse,
            });
        }
        Ok(BackscatterModel { noise_per_overlapping_pulse })
    }

    /// Extra per-gate noise probability for a given overfill. Zero when
    /// the train fits the storage line.
    pub fn extra_noise(&self, overfill_pulses: u32) -> f64 {
        self.noise_per_overlapping_pulse * overfill_pulses as f64
    }
}

/// Calibrates the backscatter coefficient from a measured baseline: an
/// overfill of [`QBER_DOUBLING_OVERFILL`] pulses must double a
/// noise-dominated QBER, which happens exactly when it contributes one
/// extra baseline noise probability per gate.
///
/// # Example
///
/// ```
/// use plugplay::sim::calibrate_backscatter;
///
/// let m = calibrate_backscatter(1e-5).unwrap();
/// assert!((m.noise_per_overlapping_pulse - 5e-7).abs() < 1e-20);
/// ```
pub fn calibrate_backscatter(baseline_noise_per_gate: f64) -> Result<BackscatterModel, SimError> {
    if !(baseline_noise_per_gate.is_finite() && baseline_noise_per_gate > 0.0) {
        return Err(SimError::ZeroBaseline);
    }
    BackscatterModel::new(baseline_noise_per_gate / QBER_DOUBLING_OVERFILL as f64)
}

/// What made a detector fire. Simulation-internal truth; protocol logic
/// never reads it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cause {
    Photon,
    Dark,
    Backscatter,
    Afterpulse,
}

impl Cause {
    pub fn name(self) -> &'static str {
        match self {
            Cause::Photon => "photon",
            Cause::Dark => "dark",
            Cause::Backscatter => "backscatter",
            Cause::Afterpulse => "afterpulse",
        }
    }
}

/// One gated slot in which exactly one detector fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionEvent {
    pub train_idx: u64,
    pub pulse_idx: u32,
    /// Which detector fired; detector N registers bit value N.
    pub detector_id: u8,
    pub bob_basis: Basis,
    pub cause: Cause,
}

impl DetectionEvent {
    /// Position in the flat slot sequence.
    pub fn global_slot(&self, pulses_per_train: u32) -> u64 {
        self.train_idx * pulses_per_train as u64 + self.pulse_idx as u64
    }

    pub const CSV_HEADER: &'static str = "train_idx,pulse_idx,detector_id,basis,cause";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.train_idx,
            self.pulse_idx,
            self.detector_id,
            self.bob_basis.code(),
            self.cause.name()
        )
    }
}

/// Event counts keyed by truth tag.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CauseCounts {
    pub photon: u64,
    pub dark: u64,
    pub backscatter: u64,
    pub afterpulse: u64,
}

impl CauseCounts {
    fn add(&mut self, cause: Cause) {
        match cause {
            Cause::Photon => self.photon += 1,
            Cause::Dark => self.dark += 1,
            Cause::Backscatter => self.backscatter += 1,
            Cause::Afterpulse => self.afterpulse += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.photon + self.dark + self.backscatter + self.afterpulse
    }
}

/// A transformation the line applies to each flying symbol.
///
/// Implementations may consume randomness; they draw from the slot rng in
/// a fixed order, which keeps whole transmissions replayable from seeds.
pub trait PulseChannel {
    fn transmit(&mut self, rng: &mut ChaCha12Rng, symbol: QuantumSymbol) -> QuantumSymbol;
}

/// The undisturbed line.
pub struct IdentityChannel;

impl PulseChannel for IdentityChannel {
    fn transmit(&mut self, _rng: &mut ChaCha12Rng, symbol: QuantumSymbol) -> QuantumSymbol {
        symbol
    }
}

/// How the attacker picks a measurement basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EveBasis {
    /// Uniformly random per pulse: the textbook attack, disturbing one
    /// matched-basis bit in four.
    Random,
    /// Always the sender's true basis: an oracle attacker who disturbs
    /// nothing. Useful as a control, impossible physically.
    MatchSender,
}

/// Intercept-resend attacker: measures each pulse, re-emits the observed
/// state into the wrapped channel segment.
pub struct InterceptResend<C> {
    inner: C,
    basis: EveBasis,
}

impl<C> InterceptResend<C> {
    pub fn new(inner: C, basis: EveBasis) -> InterceptResend<C> {
        InterceptResend { inner, basis }
    }
}

/// The standard attacker on top of an existing channel segment.
pub fn intercept_resend_channel<C: PulseChannel>(inner: C) -> InterceptResend<C> {
    InterceptResend::new(inner, EveBasis::Random)
}

impl<C: PulseChannel> PulseChannel for InterceptResend<C> {
    fn transmit(&mut self, rng: &mut ChaCha12Rng, symbol: QuantumSymbol) -> QuantumSymbol {
        let symbol = self.inner.transmit(rng, symbol);
        let eve_basis = match self.basis {
            EveBasis::MatchSender => symbol.basis,
            EveBasis::Random => Basis::random(rng),
        };
        let observed = if eve_basis == symbol.basis {
            symbol.bit
        } else {
            rng.gen_bool(0.5)
        };
        QuantumSymbol { basis: eve_basis, bit: observed }
    }
}

/// CLI-level attacker switch; dispatches to the concrete channel types.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Attacker {
    #[default]
    None,
    InterceptResend {
        basis: EveBasis,
    },
}

// Outcome atoms for one gated slot, cumulative. Index meaning depends on
// whether the arriving basis matched the measurement basis: matched
// [photon-keep, photon-flip, noise0-dark, noise0-bs, noise1-dark,
// noise1-bs], mismatched [photon-det0, photon-det1, same four noise
// atoms]. Any draw at or past `p_any` is an empty slot or a discarded
// double click.
#[derive(Debug, Clone, Copy)]
struct AtomTable {
    cum: [f64; 6],
    p_any: f64,
}

impl AtomTable {
    fn build(atoms: [f64; 6]) -> AtomTable {
        let mut cum = [0.0; 6];
        let mut acc = 0.0;
        for (c, a) in cum.iter_mut().zip(atoms) {
            acc += a;
            *c = acc;
        }
        AtomTable { cum, p_any: acc }
    }

    fn pick(&self, u: f64) -> Option<usize> {
        if u >= self.p_any {
            return None;
        }
        let mut i = 0;
        while u >= self.cum[i] {
            i += 1;
        }
        Some(i)
    }
}

/// Precomputed one-draw sampler for a fixed optical and detector setting.
///
/// Collapses the whole slot experiment (photon, routing, two noisy
/// detectors, double-click discard) into a single uniform draw against a
/// cumulative table, which is what makes billion-slot runs cheap. The
/// accumulated-afterpulse hazard is the one thing it cannot carry, since
/// that depends on previous slots; an isolated slot has no history, so
/// afterpulses simply never fire here. [`run_session`] switches to a
/// stateful per-gate path when afterpulsing is enabled.
pub struct SlotSampler {
    matched: AtomTable,
    mismatched: AtomTable,
    click_p: f64,
    noise_fire_p: f64,
}

impl SlotSampler {
    pub fn new(
        optical: &OpticalConfig,
        detector: &DetectorModel,
        extra_noise: f64,
    ) -> Result<SlotSampler, SimError> {
        check_fraction("extra_noise", extra_noise)?;
        if extra_noise >= 1.0 {
            return Err(SimError::BadParameter { name: "extra_noise", value: extra_noise });
        }
        let p_click = optical.click_probability(detector.eta_d);
        let p_dark = detector.p_noise_per_gate;
        let p_bs = extra_noise;
        // One detector self-fires if either noise source avalanches;
        // when both do, the tag goes to dark.
        let p_fire = p_dark + (1.0 - p_dark) * p_bs;
        let tag_dark = p_dark;
        let tag_bs = (1.0 - p_dark) * p_bs;
        let qopt = optical.qber_opt;

        let photon_single = p_click * (1.0 - p_fire);
        let noise_single = (1.0 - p_click) * (1.0 - p_fire);
        let matched = AtomTable::build([
            photon_single * (1.0 - qopt),
            photon_single * qopt,
            noise_single * tag_dark,
            noise_single * tag_bs,
            noise_single * tag_dark,
            noise_single * tag_bs,
        ]);
        let mismatched = AtomTable::build([
            photon_single * 0.5,
            photon_single * 0.5,
            noise_single * tag_dark,
            noise_single * tag_bs,
            noise_single * tag_dark,
            noise_single * tag_bs,
        ]);
        Ok(SlotSampler { matched, mismatched, click_p: p_click, noise_fire_p: p_fire })
    }

    /// Photon click probability per gate.
    pub fn click_probability(&self) -> f64 {
        self.click_p
    }

    /// Per-detector self-firing probability per gate (dark plus
    /// backscatter).
    pub fn noise_fire_probability(&self) -> f64 {
        self.noise_fire_p
    }

    /// Probability that a slot yields an event, before basis accounting.
    pub fn event_probability(&self) -> f64 {
        // Matched and mismatched slots share it: routing moves clicks
        // between detectors but never creates or destroys them.
        self.matched.p_any
    }

    /// Runs one slot. `arriving` is the symbol at the analyzer, after any
    /// channel transformation.
    pub fn sample(
        &self,
        rng: &mut ChaCha12Rng,
        arriving: QuantumSymbol,
        bob_basis: Basis,
        train_idx: u64,
        pulse_idx: u32,
    ) -> Option<DetectionEvent> {
        let u: f64 = rng.gen();
        let (table, matched) = if arriving.basis == bob_basis {
            (&self.matched, true)
        } else {
            (&self.mismatched, false)
        };
        let atom = table.pick(u)?;
        let bit = arriving.bit as u8;
        let (detector_id, cause) = match (matched, atom) {
            (true, 0) => (bit, Cause::Photon),
            (true, 1) => (1 - bit, Cause::Photon),
            (false, 0) => (0, Cause::Photon),
            (false, 1) => (1, Cause::Photon),
            (_, 2) => (0, Cause::Dark),
            (_, 3) => (0, Cause::Backscatter),
            (_, 4) => (1, Cause::Dark),
            (_, 5) => (1, Cause::Backscatter),
            _ => unreachable!(),
        };
        Some(DetectionEvent { train_idx, pulse_idx, detector_id, bob_basis, cause })
    }
}

/// One slot of the full experiment, for callers driving their own loops.
///
/// Slot experiments are independent; the afterpulse hazard, which couples
/// consecutive gates, is always zero here (see [`SlotSampler`]).
#[allow(clippy::too_many_arguments)]
pub fn simulate_slot(
    rng: &mut ChaCha12Rng,
    optical: &OpticalConfig,
    detector: &DetectorModel,
    extra_noise: f64,
    alice_state: QuantumSymbol,
    bob_basis: Basis,
    train_idx: u64,
    pulse_idx: u32,
) -> Result<Option<DetectionEvent>, SimError> {
    let sampler = SlotSampler::new(optical, detector, extra_noise)?;
    Ok(sampler.sample(rng, alice_state, bob_basis, train_idx, pulse_idx))
}

// Per-detector afterpulse hazard accumulator. The hazard a detector sees
// in a gate is the decayed sum of `prob` seeds from every earlier
// avalanche, whether or not that avalanche produced a reported event.
struct AfterpulseState {
    hazard: [f64; 2],
    prob: f64,
    decay: f64,
}

impl AfterpulseState {
    fn new(model: Afterpulse) -> AfterpulseState {
        AfterpulseState { hazard: [0.0; 2], prob: model.prob, decay: model.decay }
    }

    fn update(&mut self, avalanche: [bool; 2]) {
        for (h, fired) in self.hazard.iter_mut().zip(avalanche) {
            *h = (*h * self.decay + if fired { self.prob } else { 0.0 }).min(0.999);
        }
    }
}

/// Explicit seeds for the three random streams of one transmission. Both
/// endpoints must agree on these for the co-simulated quantum layer to be
/// consistent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransmissionSeeds {
    /// Sender's symbol stream.
    pub alice_symbols: u64,
    /// Receiver's measurement basis stream.
    pub bob_bases: u64,
    /// Everything the physics decides: losses, routing, noise, attacker
    /// choices.
    pub outcomes: u64,
}

impl TransmissionSeeds {
    /// Derives the three streams from one master seed.
    pub fn derive(master: u64) -> TransmissionSeeds {
        let [alice_symbols, bob_bases, outcomes] = crate::bits::subseeds(master);
        TransmissionSeeds { alice_symbols, bob_bases, outcomes }
    }
}

/// Everything needed to run slots: optics, detectors, optional extra
/// noise sources and an optional attacker.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub optical: OpticalConfig,
    pub detector: DetectorModel,
    pub backscatter: Option<BackscatterModel>,
    pub attacker: Attacker,
    /// Source pulse rate in Hz before duty-cycle reduction.
    pub base_rep_rate_hz: f64,
}

impl SimConfig {
    /// Extra per-gate noise from backscatter under a given schedule; zero
    /// without a model or without overfill.
    pub fn extra_noise(&self, schedule: &TrainSchedule) -> f64 {
        self.backscatter.map(|b| b.extra_noise(schedule.overfill_pulses())).unwrap_or(0.0)
    }
}

/// Aggregate statistics of a simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct QberReport {
    pub n_trains: u64,
    pub n_slots: u64,
    /// Slots in which exactly one detector fired.
    pub n_events: u64,
    /// Events in slots where the sender's and receiver's bases matched:
    /// the detections that survive sifting.
    pub n_sifted: u64,
    /// Sifted events registering the wrong bit.
    pub n_errors: u64,
    /// `n_errors / n_sifted`; zero when nothing was sifted.
    pub qber: f64,
    /// Sifted detections per second of wall time, `n_sifted / n_slots`
    /// times the effective repetition rate.
    pub raw_rate_hz: f64,
    pub effective_rep_rate_hz: f64,
    pub duty_factor: f64,
    pub events_by_cause: CauseCounts,
    pub errors_by_cause: CauseCounts,
    /// Extra per-gate noise that was applied for backscatter.
    pub backscatter_extra_noise: f64,
}

struct DriveStats {
    n_slots: u64,
    n_events: u64,
    n_sifted: u64,
    n_errors: u64,
    events_by_cause: CauseCounts,
    errors_by_cause: CauseCounts,
}

// The inner loop shared by every run entry point. Calls `on_event` for
// each detection with the sender's original symbol (pre-channel), which
// is what sifting and error truth are measured against.
fn drive<C: PulseChannel>(
    optical: &OpticalConfig,
    detector: &DetectorModel,
    extra_noise: f64,
    channel: &mut C,
    pulses_per_train: u32,
    n_trains: u64,
    seeds: TransmissionSeeds,
    mut on_event: impl FnMut(DetectionEvent, QuantumSymbol),
) -> Result<DriveStats, SimError> {
    let sampler = SlotSampler::new(optical, detector, extra_noise)?;
    let mut alice = BitSource::new(seeds.alice_symbols);
    let mut bob = BitSource::new(seeds.bob_bases);
    let mut rng = ChaCha12Rng::seed_from_u64(seeds.outcomes);
    let mut stats = DriveStats {
        n_slots: n_trains * pulses_per_train as u64,
        n_events: 0,
        n_sifted: 0,
        n_errors: 0,
        events_by_cause: CauseCounts::default(),
        errors_by_cause: CauseCounts::default(),
    };
    let mut afterpulse = detector.afterpulse.map(AfterpulseState::new);

    for train_idx in 0..n_trains {
        for pulse_idx in 0..pulses_per_train {
            let sent = alice.symbol();
            let bob_basis = bob.basis();
            let arriving = channel.transmit(&mut rng, sent);
            let event = match afterpulse.as_mut() {
                None => sampler.sample(&mut rng, arriving, bob_basis, train_idx, pulse_idx),
                Some(ap) => {
                    slow_slot(&mut rng, &sampler, ap, optical, detector, extra_noise, arriving, bob_basis, train_idx, pulse_idx)
                }
            };
            if let Some(e) = event {
                stats.n_events += 1;
                stats.events_by_cause.add(e.cause);
                if sent.basis == bob_basis {
                    stats.n_sifted += 1;
                    if e.detector_id != sent.bit as u8 {
                        stats.n_errors += 1;
                        stats.errors_by_cause.add(e.cause);
                    }
                }
                on_event(e, sent);
            }
        }
    }
    Ok(stats)
}

// Stateful per-gate path used when afterpulsing is on: resolves each
// detector's firing sources explicitly and feeds every avalanche back
// into the hazard accumulator, including avalanches in discarded
// double-click slots.
#[allow(clippy::too_many_arguments)]
fn slow_slot(
    rng: &mut ChaCha12Rng,
    sampler: &SlotSampler,
    ap: &mut AfterpulseState,
    optical: &OpticalConfig,
    detector: &DetectorModel,
    extra_noise: f64,
    arriving: QuantumSymbol,
    bob_basis: Basis,
    train_idx: u64,
    pulse_idx: u32,
) -> Option<DetectionEvent> {
    let matched = arriving.basis == bob_basis;
    let click = rng.gen_bool(sampler.click_probability());
    let photon_det: Option<u8> = if click {
        Some(if matched {
            let flip = rng.gen_bool(optical.qber_opt);
            arriving.bit as u8 ^ flip as u8
        } else {
            rng.gen_bool(0.5) as u8
        })
    } else {
        None
    };

    let mut fired = [false; 2];
    let mut cause: [Option<Cause>; 2] = [None; 2];
    for d in 0..2usize {
        let dark = rng.gen_bool(detector.p_noise_per_gate);
        let bs = rng.gen_bool(extra_noise);
        let after = rng.gen_bool(ap.hazard[d]);
        let photon = photon_det == Some(d as u8);
        fired[d] = photon || dark || bs || after;
        cause[d] = if photon {
            Some(Cause::Photon)
        } else if dark {
            Some(Cause::Dark)
        } else if bs {
            Some(Cause::Backscatter)
        } else if after {
            Some(Cause::Afterpulse)
        } else {
            None
        };
    }
    ap.update(fired);

    match (fired[0], fired[1]) {
        (true, false) => Some(DetectionEvent {
            train_idx,
            pulse_idx,
            detector_id: 0,
            bob_basis,
            cause: cause[0].unwrap(),
        }),
        (false, true) => Some(DetectionEvent {
            train_idx,
            pulse_idx,
            detector_id: 1,
            bob_basis,
            cause: cause[1].unwrap(),
        }),
        _ => None,
    }
}

fn report_from_stats(
    stats: DriveStats,
    n_trains: u64,
    schedule: &TrainSchedule,
    base_rep_rate_hz: f64,
    extra_noise: f64,
) -> QberReport {
    let eff = effective_rep_rate(schedule, base_rep_rate_hz);
    let qber = if stats.n_sifted > 0 { stats.n_errors as f64 / stats.n_sifted as f64 } else { 0.0 };
    QberReport {
        n_trains,
        n_slots: stats.n_slots,
        n_events: stats.n_events,
        n_sifted: stats.n_sifted,
        n_errors: stats.n_errors,
        qber,
        raw_rate_hz: if stats.n_slots > 0 {
            stats.n_sifted as f64 / stats.n_slots as f64 * eff.hz
        } else {
            0.0
        },
        effective_rep_rate_hz: eff.hz,
        duty_factor: eff.duty_factor,
        events_by_cause: stats.events_by_cause,
        errors_by_cause: stats.errors_by_cause,
        backscatter_extra_noise: extra_noise,
    }
}

fn run_with_channel(
    config: &SimConfig,
    schedule: &TrainSchedule,
    n_trains: u64,
    seeds: TransmissionSeeds,
    on_event: impl FnMut(DetectionEvent, QuantumSymbol),
) -> Result<DriveStats, SimError> {
    let extra = config.extra_noise(schedule);
    match config.attacker {
        Attacker::None => drive(
            &config.optical,
            &config.detector,
            extra,
            &mut IdentityChannel,
            schedule.pulses_per_train,
            n_trains,
            seeds,
            on_event,
        ),
        Attacker::InterceptResend { basis } => drive(
            &config.optical,
            &config.detector,
            extra,
            &mut InterceptResend::new(IdentityChannel, basis),
            schedule.pulses_per_train,
            n_trains,
            seeds,
            on_event,
        ),
    }
}

/// Simulates `n_trains` trains and reports rates, QBER and the truth-tag
/// breakdown. Fully deterministic in `seed`.
pub fn run_session(
    config: &SimConfig,
    schedule: &TrainSchedule,
    n_trains: u64,
    seed: u64,
) -> Result<QberReport, SimError> {
    if n_trains == 0 {
        return Err(SimError::BadParameter { name: "n_trains", value: 0.0 });
    }
    let seeds = TransmissionSeeds::derive(seed);
    let extra = config.extra_noise(schedule);
    let stats = run_with_channel(config, schedule, n_trains, seeds, |_, _| {})?;
    Ok(report_from_stats(stats, n_trains, schedule, config.base_rep_rate_hz, extra))
}

/// [`run_session`] plus the full event stream, for CSV export and tests.
pub fn run_session_with_events(
    config: &SimConfig,
    schedule: &TrainSchedule,
    n_trains: u64,
    seed: u64,
) -> Result<(QberReport, Vec<DetectionEvent>), SimError> {
    if n_trains == 0 {
        return Err(SimError::BadParameter { name: "n_trains", value: 0.0 });
    }
    let seeds = TransmissionSeeds::derive(seed);
    let extra = config.extra_noise(schedule);
    let mut events = Vec::new();
    let stats =
        run_with_channel(config, schedule, n_trains, seeds, |e, _| events.push(e))?;
    Ok((report_from_stats(stats, n_trains, schedule, config.base_rep_rate_hz, extra), events))
}

/// The receiver-side record of one quantum transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub events: Vec<DetectionEvent>,
    pub n_trains: u64,
    pub pulses_per_train: u32,
    pub n_slots: u64,
}

/// Runs the quantum layer for a protocol session: the receiver observes
/// only its own detection events, while the sender can regenerate its
/// symbol stream from `seeds.alice_symbols` independently.
pub fn run_transmission(
    config: &SimConfig,
    schedule: &TrainSchedule,
    n_trains: u64,
    seeds: TransmissionSeeds,
) -> Result<Transmission, SimError> {
    if n_trains == 0 {
        return Err(SimError::BadParameter { name: "n_trains", value: 0.0 });
    }
    let mut events = Vec::new();
    run_with_channel(config, schedule, n_trains, seeds, |e, _| events.push(e))?;
    Ok(Transmission {
        events,
        n_trains,
        pulses_per_train: schedule.pulses_per_train,
        n_slots: n_trains * schedule.pulses_per_train as u64,
    })
}
