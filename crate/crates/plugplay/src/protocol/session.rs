//! Endpoint state machines and the full-session driver.
//!
//! Alice owns the reference key and answers; Bob owns the detections and
//! drives every decision that needs randomness (sample positions,
//! shuffle seeds, the amplification seed). Policy outcomes such as an
//! estimate over the abort threshold or a failed verification are
//! decided locally by both sides from data they share, so neither has to
//! tell the other: the transcripts stay symmetric and the session ends
//! as an aborted outcome, not an error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::analytic::{self, effective_rep_rate, TrainSchedule};
use crate::bits::{subseeds, BitSource};
use crate::protocol::amplify::{amplified_len, key_digest, privacy_amplify};
use crate::protocol::cascade::{
    drive_reconcile, respond_reconcile, CascadeParams, ReconcileSummary,
};
use crate::protocol::keybuf::{KeyBuffer, KeyStage};
use crate::protocol::wire::{
    AbortMsg, BitsMsg, DetectionsMsg, HashSeedMsg, KeepMaskMsg, KeyHashMsg, SampleIndicesMsg,
    SessionConfigMsg,
};
use crate::protocol::{AbortStage, ProtocolError};
use crate::qubit::{Basis, QuantumSymbol};
use crate::sim::{
    run_transmission, Attacker, DetectionEvent, EveBasis, SimConfig, TransmissionSeeds,
};
use crate::transport::{memory_pair, AuditCounters, AuditedChannel, Channel, MessageType};

/// Shared policy knobs both endpoints must agree on.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionPolicy {
    /// Target mean photon number. Carried in the policy so an endpoint
    /// can refuse optics that violate the security convention it was
    /// configured for.
    pub mu: f64,
    /// Fraction of the sifted key sacrificed to estimate the QBER.
    pub sample_fraction: f64,
    pub cascade: CascadeParams,
    /// Bits removed by amplification on top of the computed compression.
    pub pa_safety_margin_bits: u64,
    /// Estimated QBER at or above which the session is abandoned.
    pub qber_abort_threshold: f64,
}

impl Default for SessionPolicy {
    fn default() -> SessionPolicy {
        SessionPolicy {
            mu: 0.1,
            sample_fraction: 0.5,
            cascade: CascadeParams::default(),
            pa_safety_margin_bits: 64,
            qber_abort_threshold: analytic::distillation_threshold(),
        }
    }
}

impl SessionPolicy {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(ProtocolError::BadParameter { name: "mu", value: self.mu });
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction < 1.0) {
            return Err(ProtocolError::BadParameter {
                name: "sample_fraction",
                value: self.sample_fraction,
            });
        }
        self.cascade.validate()?;
        if !(self.qber_abort_threshold > 0.0 && self.qber_abort_threshold <= 0.5) {
            return Err(ProtocolError::BadParameter {
                name: "qber_abort_threshold",
                value: self.qber_abort_threshold,
            });
        }
        Ok(())
    }
}

/// Everything a session runs from: physics, timing and policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSetup {
    pub sim: SimConfig,
    pub schedule: TrainSchedule,
    pub policy: SessionPolicy,
}

fn absorb_f64(h: &mut Sha256, x: f64) {
    h.update(x.to_bits().to_be_bytes());
}

impl SessionSetup {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        self.policy.validate()?;
        if (self.policy.mu - self.sim.optical.mu).abs() > 1e-9 {
            return Err(ProtocolError::BadParameter {
                name: "mu (optics disagree with policy)",
                value: self.sim.optical.mu,
            });
        }
        Ok(())
    }

    /// Digest over every field that affects behavior. Endpoints compare
    /// digests in the opening handshake; a mismatch means they would
    /// diverge silently later, so it aborts the session instead.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let o = &self.sim.optical;
        absorb_f64(&mut h, o.mu);
        absorb_f64(&mut h, o.eta_t);
        absorb_f64(&mut h, o.qber_opt);
        let d = &self.sim.detector;
        absorb_f64(&mut h, d.eta_d);
        absorb_f64(&mut h, d.p_noise_per_gate);
        absorb_f64(&mut h, d.gate_width_s);
        match &d.operating_curve {
            None => h.update([0]),
            Some(c) => {
                h.update([1]);
                h.update((c.points().len() as u32).to_be_bytes());
                for p in c.points() {
                    absorb_f64(&mut h, p.eta_d);
                    absorb_f64(&mut h, p.p_noise);
                }
            }
        }
        match &d.afterpulse {
            None => h.update([0]),
            Some(a) => {
                h.update([1]);
                absorb_f64(&mut h, a.prob);
                absorb_f64(&mut h, a.decay);
            }
        }
        match &self.sim.backscatter {
            None => h.update([0]),
            Some(b) => {
                h.update([1]);
                absorb_f64(&mut h, b.noise_per_overlapping_pulse);
            }
        }
        match self.sim.attacker {
            Attacker::None => h.update([0]),
            Attacker::InterceptResend { basis } => {
                h.update([1]);
                h.update([match basis {
                    EveBasis::Random => 0u8,
                    EveBasis::MatchSender => 1,
                }]);
            }
        }
        absorb_f64(&mut h, self.sim.base_rep_rate_hz);
        let s = &self.schedule;
        h.update(s.pulses_per_train.to_be_bytes());
        absorb_f64(&mut h, s.pulse_spacing_s);
        absorb_f64(&mut h, s.storage_line_km);
        absorb_f64(&mut h, s.group_velocity_m_per_s);
        absorb_f64(&mut h, s.line_length_km);
        let p = &self.policy;
        absorb_f64(&mut h, p.mu);
        absorb_f64(&mut h, p.sample_fraction);
        h.update(p.cascade.passes.to_be_bytes());
        absorb_f64(&mut h, p.cascade.initial_block_coeff);
        h.update(p.pa_safety_margin_bits.to_be_bytes());
        absorb_f64(&mut h, p.qber_abort_threshold);
        h.finalize().into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Alice,
    Bob,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Alice => "alice",
            Role::Bob => "bob",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What one endpoint knows when its half of the session ends.
#[derive(Debug, Clone)]
pub struct EndpointOutcome {
    pub role: Role,
    /// Final key; present only when the session completed.
    pub final_key: Option<KeyBuffer>,
    pub aborted: Option<(AbortStage, String)>,
    pub n_slots: u64,
    /// Detections the receiver reported.
    pub n_events: u64,
    /// Key length right after sifting, before sampling.
    pub sifted_len: usize,
    /// Bits sacrificed for estimation (per key).
    pub sampled_bits: u64,
    pub qber_estimate: f64,
    /// The driver's summary is complete; the responder only sees parity
    /// totals.
    pub reconcile: ReconcileSummary,
    /// Leak ledger of the key this endpoint held.
    pub leaked_bits: u64,
    pub sent: AuditCounters,
    pub received: AuditCounters,
    /// Digests of (sent, received) classical traffic.
    pub transcript: ([u8; 32], [u8; 32]),
}

/// The sender's slot program: one uniformly random symbol per slot,
/// regenerable from the seed alone. A session never materializes this;
/// the sender walks the same stream incrementally while sifting.
pub fn alice_prepare(seed: u64, n_slots: u64) -> Vec<QuantumSymbol> {
    let mut src = BitSource::new(seed);
    (0..n_slots).map(|_| src.symbol()).collect()
}

/// Basis reconciliation on materialized records: keeps the slots where a
/// detection occurred and bases match. Returns (sender key, receiver
/// key), always equal length.
pub fn sift(
    alice_symbols: &[QuantumSymbol],
    events: &[DetectionEvent],
    pulses_per_train: u32,
) -> Result<(KeyBuffer, KeyBuffer), ProtocolError> {
    let n_slots = alice_symbols.len() as u64;
    let mut prev: Option<u64> = None;
    let mut a_bits = Vec::new();
    let mut b_bits = Vec::new();
    for e in events {
        let slot = e.global_slot(pulses_per_train);
        if prev.is_some_and(|p| slot <= p) {
            return Err(ProtocolError::Misaligned("detections out of order"));
        }
        prev = Some(slot);
        if slot >= n_slots {
            return Err(ProtocolError::Misaligned("detection outside the session"));
        }
        let sym = alice_symbols[slot as usize];
        if sym.basis == e.bob_basis {
            a_bits.push(sym.bit);
            b_bits.push(e.detector_id == 1);
        }
    }
    Ok((
        KeyBuffer::new(a_bits, KeyStage::Sifted),
        KeyBuffer::new(b_bits, KeyStage::Sifted),
    ))
}

/// Publicly compares a random sample of both keys and returns the
/// observed mismatch fraction. Sampled positions are removed from both
/// buffers; the disclosure (both read their sample out loud) is charged
/// to both ledgers.
pub fn estimate_qber(
    alice: &mut KeyBuffer,
    bob: &mut KeyBuffer,
    sample_fraction: f64,
    seed: u64,
) -> Result<f64, ProtocolError> {
    for key in [&*alice, &*bob] {
        if key.stage() != KeyStage::Sifted {
            return Err(ProtocolError::WrongStage {
                expected: KeyStage::Sifted,
                got: key.stage(),
            });
        }
    }
    if alice.len() != bob.len() {
        return Err(ProtocolError::Misaligned("keys differ in length"));
    }
    if !(sample_fraction > 0.0 && sample_fraction < 1.0) {
        return Err(ProtocolError::BadParameter {
            name: "sample_fraction",
            value: sample_fraction,
        });
    }
    let k = (alice.len() as f64 * sample_fraction).floor() as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut positions = rand::seq::index::sample(&mut rng, alice.len(), k).into_vec();
    positions.sort_unstable();
    let a = alice.remove_positions(&positions)?;
    let b = bob.remove_positions(&positions)?;
    let mismatches = a.iter().zip(&b).filter(|(x, y)| x != y).count();
    alice.note_leak(2 * k as u64);
    bob.note_leak(2 * k as u64);
    Ok(if k > 0 { mismatches as f64 / k as f64 } else { 0.0 })
}

/// Compares short digests of both keys; true means equal except for a
/// 2^-64 collision chance. The disclosed digest bits (one per direction)
/// go on both ledgers, before amplification.
pub fn verify_keys(alice: &mut KeyBuffer, bob: &mut KeyBuffer) -> Result<bool, ProtocolError> {
    for key in [&*alice, &*bob] {
        if key.stage() < KeyStage::Reconciled {
            return Err(ProtocolError::WrongStage {
                expected: KeyStage::Reconciled,
                got: key.stage(),
            });
        }
    }
    let da = key_digest(alice.bits());
    let db = key_digest(bob.bits());
    alice.note_leak(128);
    bob.note_leak(128);
    Ok(da == db)
}

enum SessionEnd {
    Completed(KeyBuffer),
    Aborted(AbortStage, String),
}

#[derive(Default)]
struct Progress {
    n_slots: u64,
    n_events: u64,
    sifted_len: usize,
    sampled_bits: u64,
    qber_estimate: f64,
    reconcile: ReconcileSummary,
    leaked_bits: u64,
}

fn recv_expect<C: Channel>(
    ch: &mut C,
    expected: MessageType,
) -> Result<Vec<u8>, ProtocolError> {
    let (got, payload) = ch.recv()?;
    if got == expected {
        Ok(payload)
    } else if got == MessageType::Abort {
        let msg = AbortMsg::decode(&payload)?;
        Err(ProtocolError::PeerAbort {
            stage: msg.stage,
            reason: msg.reason,
        })
    } else {
        Err(ProtocolError::Unexpected { got, expected })
    }
}

/// Walks the sender's symbol stream once against the reported
/// detections: which are kept (bases match) and what the sender's key
/// bits at the kept slots are.
fn alice_sift(
    symbol_seed: u64,
    n_slots: u64,
    entries: &[(u64, Basis)],
) -> Result<(Vec<bool>, Vec<bool>), ProtocolError> {
    let mut src = BitSource::new(symbol_seed);
    let mut keep = Vec::with_capacity(entries.len());
    let mut bits = Vec::new();
    let mut slot = 0u64;
    for &(target, bob_basis) in entries {
        if target >= n_slots {
            return Err(ProtocolError::Misaligned("detection outside the session"));
        }
        while slot < target {
            src.symbol();
            slot += 1;
        }
        let sym = src.symbol();
        slot += 1;
        let matched = sym.basis == bob_basis;
        keep.push(matched);
        if matched {
            bits.push(sym.bit);
        }
    }
    Ok((keep, bits))
}

fn mismatch_fraction(mine: &[bool], theirs: &[bool]) -> f64 {
    if mine.is_empty() {
        return 0.0;
    }
    let mismatches = mine.iter().zip(theirs).filter(|(a, b)| a != b).count();
    mismatches as f64 / mine.len() as f64
}

fn conclude<C: Channel>(
    role: Role,
    end: Result<SessionEnd, ProtocolError>,
    prog: Progress,
    ch: AuditedChannel<C>,
) -> Result<EndpointOutcome, ProtocolError> {
    // A peer abort notice is a session outcome, not a failure.
    let end = match end {
        Err(ProtocolError::PeerAbort { stage, reason }) => Ok(SessionEnd::Aborted(stage, reason)),
        other => other,
    }?;
    let (final_key, aborted) = match end {
        SessionEnd::Completed(key) => (Some(key), None),
        SessionEnd::Aborted(stage, reason) => (None, Some((stage, reason))),
    };
    let leaked_bits = final_key
        .as_ref()
        .map(|k| k.leaked_bits())
        .unwrap_or(prog.leaked_bits);
    Ok(EndpointOutcome {
        role,
        final_key,
        aborted,
        n_slots: prog.n_slots,
        n_events: prog.n_events,
        sifted_len: prog.sifted_len,
        sampled_bits: prog.sampled_bits,
        qber_estimate: prog.qber_estimate,
        reconcile: prog.reconcile,
        leaked_bits,
        sent: *ch.sent(),
        received: *ch.received(),
        transcript: ch.transcript_digests(),
    })
}

/// Runs the sender endpoint over `channel` until the session completes
/// or aborts. The transmission seeds go to the peer in the opening
/// handshake; this side only ever materializes its own symbol stream.
pub fn run_alice<C: Channel>(
    setup: &SessionSetup,
    n_trains: u64,
    seeds: TransmissionSeeds,
    channel: C,
) -> Result<EndpointOutcome, ProtocolError> {
    setup.validate()?;
    let mut ch = AuditedChannel::new(channel);
    let mut prog = Progress::default();
    let end = alice_flow(setup, n_trains, seeds, &mut ch, &mut prog);
    conclude(Role::Alice, end, prog, ch)
}

fn alice_flow<C: Channel>(
    setup: &SessionSetup,
    n_trains: u64,
    seeds: TransmissionSeeds,
    ch: &mut AuditedChannel<C>,
    prog: &mut Progress,
) -> Result<SessionEnd, ProtocolError> {
    let policy = &setup.policy;
    let n_slots = n_trains * setup.schedule.pulses_per_train as u64;
    prog.n_slots = n_slots;

    // Handshake: propose, expect an identical echo.
    let hello = SessionConfigMsg {
        config_digest: setup.digest(),
        n_trains,
        seeds,
    };
    ch.send(MessageType::SessionConfig, &hello.encode())?;
    let echo = SessionConfigMsg::decode(&recv_expect(ch, MessageType::SessionConfig)?)?;
    if echo != hello {
        return Err(ProtocolError::Misaligned("session config echo differs"));
    }

    // Sifting: learn which slots fired, reply with the keep verdicts.
    let detections = DetectionsMsg::decode(&recv_expect(ch, MessageType::BasisReveal)?)?;
    prog.n_events = detections.entries.len() as u64;
    let (keep, my_bits) = alice_sift(seeds.alice_symbols, n_slots, &detections.entries)?;
    ch.send(MessageType::BasisReveal, &KeepMaskMsg { keep }.encode())?;
    let mut key = KeyBuffer::new(my_bits, KeyStage::Sifted);
    prog.sifted_len = key.len();

    // Estimation: the peer names the sample, both read theirs out loud.
    let pre_sample_len = key.len();
    let expected_k = (pre_sample_len as f64 * policy.sample_fraction).floor() as usize;
    let indices = SampleIndicesMsg::decode(&recv_expect(ch, MessageType::SampleIndices)?)?;
    if indices.indices.len() != expected_k {
        return Err(ProtocolError::Misaligned("sample size violates policy"));
    }
    let mut positions = Vec::with_capacity(indices.indices.len());
    for &i in &indices.indices {
        let p = usize::try_from(i).map_err(|_| ProtocolError::SampleTooLarge)?;
        if p >= pre_sample_len {
            return Err(ProtocolError::SampleTooLarge);
        }
        positions.push(p);
    }
    let theirs = BitsMsg::decode(&recv_expect(ch, MessageType::SampleBits)?, "sample bits")?.bits;
    if theirs.len() != positions.len() {
        return Err(ProtocolError::Misaligned("sample bit count differs from indices"));
    }
    let mine = key.remove_positions(&positions)?;
    ch.send(MessageType::SampleBits, &BitsMsg { bits: mine.clone() }.encode())?;
    key.note_leak(2 * mine.len() as u64);
    let estimate = mismatch_fraction(&mine, &theirs);
    prog.sampled_bits = mine.len() as u64;
    prog.qber_estimate = estimate;
    prog.leaked_bits = key.leaked_bits();
    if estimate >= policy.qber_abort_threshold {
        return Ok(SessionEnd::Aborted(
            AbortStage::Estimate,
            "eavesdropping assumed".into(),
        ));
    }

    // Reconciliation: answer parity queries until the driver is done.
    let summary = respond_reconcile(&mut key, ch)?;
    prog.reconcile = summary;
    prog.leaked_bits = key.leaked_bits();

    // Verification: the driver discloses its digest first.
    let peer_digest = KeyHashMsg::decode(&recv_expect(ch, MessageType::KeyHash)?)?;
    let my_digest = KeyHashMsg {
        digest: key_digest(key.bits()),
    };
    ch.send(MessageType::KeyHash, &my_digest.encode())?;
    key.note_leak(128);
    prog.leaked_bits = key.leaked_bits();
    if peer_digest.digest != my_digest.digest {
        return Ok(SessionEnd::Aborted(
            AbortStage::Verify,
            "key digests differ".into(),
        ));
    }

    // Amplification: check the announced length against our own
    // derivation, then hash.
    let hash_msg = HashSeedMsg::decode(&recv_expect(ch, MessageType::HashSeed)?)?;
    let leaked_for_pa = summary.parity_bits + 128;
    let out_len = amplified_len(key.len(), estimate, leaked_for_pa, policy.pa_safety_margin_bits)?;
    if hash_msg.out_len != out_len as u64 {
        return Err(ProtocolError::Misaligned("amplified key length differs"));
    }
    let final_key = privacy_amplify(&key, estimate, leaked_for_pa, policy, hash_msg.seed)?;
    prog.leaked_bits = final_key.leaked_bits();
    Ok(SessionEnd::Completed(final_key))
}

/// Runs the receiver endpoint over `channel`: simulates the quantum
/// transmission described by the handshake, then drives sifting,
/// estimation, reconciliation, verification and amplification.
pub fn run_bob<C: Channel>(
    setup: &SessionSetup,
    private_seed: u64,
    channel: C,
) -> Result<EndpointOutcome, ProtocolError> {
    setup.validate()?;
    let mut ch = AuditedChannel::new(channel);
    let mut prog = Progress::default();
    let end = bob_flow(setup, private_seed, &mut ch, &mut prog);
    conclude(Role::Bob, end, prog, ch)
}

fn bob_flow<C: Channel>(
    setup: &SessionSetup,
    private_seed: u64,
    ch: &mut AuditedChannel<C>,
    prog: &mut Progress,
) -> Result<SessionEnd, ProtocolError> {
    let policy = &setup.policy;
    let [sample_seed, cascade_seed, hash_seed] = subseeds(private_seed);

    // Handshake: accept only a proposal that matches our own setup.
    let hello = SessionConfigMsg::decode(&recv_expect(ch, MessageType::SessionConfig)?)?;
    if hello.config_digest != setup.digest() {
        let reason = "configuration digest mismatch";
        ch.send(
            MessageType::Abort,
            &AbortMsg {
                stage: AbortStage::Setup,
                reason: reason.into(),
            }
            .encode(),
        )?;
        return Ok(SessionEnd::Aborted(AbortStage::Setup, reason.into()));
    }
    if hello.n_trains == 0 {
        return Err(ProtocolError::BadParameter {
            name: "n_trains",
            value: 0.0,
        });
    }
    ch.send(MessageType::SessionConfig, &hello.encode())?;

    // Quantum phase, then basis reveal of everything that fired.
    let transmission = run_transmission(&setup.sim, &setup.schedule, hello.n_trains, hello.seeds)?;
    prog.n_slots = transmission.n_slots;
    prog.n_events = transmission.events.len() as u64;
    let ppt = transmission.pulses_per_train;
    let entries: Vec<(u64, Basis)> = transmission
        .events
        .iter()
        .map(|e| (e.global_slot(ppt), e.bob_basis))
        .collect();
    ch.send(MessageType::BasisReveal, &DetectionsMsg { entries }.encode())?;
    let mask = KeepMaskMsg::decode(&recv_expect(ch, MessageType::BasisReveal)?)?.keep;
    if mask.len() != transmission.events.len() {
        return Err(ProtocolError::Misaligned("keep mask length differs from detections"));
    }
    let bits: Vec<bool> = transmission
        .events
        .iter()
        .zip(&mask)
        .filter(|(_, &kept)| kept)
        .map(|(e, _)| e.detector_id == 1)
        .collect();
    let mut key = KeyBuffer::new(bits, KeyStage::Sifted);
    prog.sifted_len = key.len();

    // Estimation: draw the sample, disclose ours, hear theirs.
    let k = (key.len() as f64 * policy.sample_fraction).floor() as usize;
    let mut sample_rng = ChaCha12Rng::seed_from_u64(sample_seed);
    let mut positions = rand::seq::index::sample(&mut sample_rng, key.len(), k).into_vec();
    positions.sort_unstable();
    ch.send(
        MessageType::SampleIndices,
        &SampleIndicesMsg {
            indices: positions.iter().map(|&p| p as u64).collect(),
        }
        .encode(),
    )?;
    let mine = key.remove_positions(&positions)?;
    ch.send(MessageType::SampleBits, &BitsMsg { bits: mine.clone() }.encode())?;
    let theirs = BitsMsg::decode(&recv_expect(ch, MessageType::SampleBits)?, "sample bits")?.bits;
    if theirs.len() != mine.len() {
        return Err(ProtocolError::Misaligned("sample bit count differs from indices"));
    }
    key.note_leak(2 * mine.len() as u64);
    let estimate = mismatch_fraction(&mine, &theirs);
    prog.sampled_bits = mine.len() as u64;
    prog.qber_estimate = estimate;
    prog.leaked_bits = key.leaked_bits();
    if estimate >= policy.qber_abort_threshold {
        return Ok(SessionEnd::Aborted(
            AbortStage::Estimate,
            "eavesdropping assumed".into(),
        ));
    }

    // Reconciliation: correct our key toward the sender's.
    let summary = drive_reconcile(&mut key, estimate, &policy.cascade, cascade_seed, ch)?;
    prog.reconcile = summary;
    prog.leaked_bits = key.leaked_bits();

    // Verification: disclose first, then compare.
    let my_digest = KeyHashMsg {
        digest: key_digest(key.bits()),
    };
    ch.send(MessageType::KeyHash, &my_digest.encode())?;
    let peer_digest = KeyHashMsg::decode(&recv_expect(ch, MessageType::KeyHash)?)?;
    key.note_leak(128);
    prog.leaked_bits = key.leaked_bits();
    if peer_digest.digest != my_digest.digest {
        return Ok(SessionEnd::Aborted(
            AbortStage::Verify,
            "key digests differ".into(),
        ));
    }

    // Amplification: we pick the public seed and announce the length.
    let leaked_for_pa = summary.parity_bits + 128;
    let out_len = amplified_len(key.len(), estimate, leaked_for_pa, policy.pa_safety_margin_bits)?;
    let public_seed: u64 = ChaCha12Rng::seed_from_u64(hash_seed).gen();
    ch.send(
        MessageType::HashSeed,
        &HashSeedMsg {
            seed: public_seed,
            out_len: out_len as u64,
        }
        .encode(),
    )?;
    let final_key = privacy_amplify(&key, estimate, leaked_for_pa, policy, public_seed)?;
    prog.leaked_bits = final_key.leaked_bits();
    Ok(SessionEnd::Completed(final_key))
}

/// Combined view of one session, assembled from both endpoints.
#[derive(Debug, Clone)]
pub struct SessionReport {
    pub n_trains: u64,
    pub n_slots: u64,
    pub n_events: u64,
    pub sifted_len: usize,
    /// Measured mismatch fraction in the sacrificed sample.
    pub qber: f64,
    /// Detections per second of wall time.
    pub raw_rate_hz: f64,
    /// Sifted key bits per second.
    pub sifted_rate_hz: f64,
    /// Final secret bits per second; zero for aborted sessions.
    pub final_rate_hz: f64,
    pub final_len: usize,
    pub aborted_stage: Option<AbortStage>,
    /// True when both final keys exist and are bit-identical.
    pub keys_match: bool,
    pub duty_factor: f64,
    pub effective_rep_rate_hz: f64,
    pub alice: EndpointOutcome,
    pub bob: EndpointOutcome,
}

impl SessionReport {
    pub const CSV_HEADER: &'static str =
        "n_slots,raw_rate_hz,sifted_rate_hz,qber,final_rate_hz,aborted_stage";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            self.n_slots,
            self.raw_rate_hz,
            self.sifted_rate_hz,
            self.qber,
            self.final_rate_hz,
            self.aborted_stage.map(AbortStage::name).unwrap_or("none"),
        )
    }
}

/// Splits a session master seed into what each endpoint needs: the
/// sender's transmission seeds and the receiver's private seed.
///
/// Two processes that agree on the master seed and each take their half
/// replay [`run_full_session`] bit for bit, which is how a socketed run
/// is checked against an in-memory one.
pub fn endpoint_seeds(master_seed: u64) -> (TransmissionSeeds, u64) {
    let [transmission_master, bob_seed] = subseeds(master_seed);
    (TransmissionSeeds::derive(transmission_master), bob_seed)
}

/// Runs both endpoints back to back over an in-memory channel.
///
/// `n_slots` rounds up to whole trains. All randomness (transmission and
/// Bob's private draws) derives from `master_seed`; equal seeds replay
/// byte-identical sessions.
pub fn run_full_session(
    setup: &SessionSetup,
    n_slots: u64,
    master_seed: u64,
) -> Result<SessionReport, ProtocolError> {
    setup.validate()?;
    if n_slots == 0 {
        return Err(ProtocolError::BadParameter {
            name: "n_slots",
            value: 0.0,
        });
    }
    let ppt = setup.schedule.pulses_per_train as u64;
    let n_trains = n_slots.div_ceil(ppt);
    let (seeds, bob_seed) = endpoint_seeds(master_seed);
    let (ca, cb) = memory_pair();
    let (alice_res, bob_res) = std::thread::scope(|scope| {
        let handle = scope.spawn(move || run_alice(setup, n_trains, seeds, ca));
        let bob_res = run_bob(setup, bob_seed, cb);
        (handle.join().expect("sender endpoint panicked"), bob_res)
    });
    let alice = alice_res?;
    let bob = bob_res?;

    if alice.transcript.0 != bob.transcript.1 || alice.transcript.1 != bob.transcript.0 {
        return Err(ProtocolError::Misaligned("transcript digests do not mirror"));
    }
    let eff = effective_rep_rate(&setup.schedule, setup.sim.base_rep_rate_hz);
    let slots = bob.n_slots;
    let per_slot = |count: f64| {
        if slots > 0 {
            count / slots as f64 * eff.hz
        } else {
            0.0
        }
    };
    let final_len = bob.final_key.as_ref().map(KeyBuffer::len).unwrap_or(0);
    let keys_match = match (&alice.final_key, &bob.final_key) {
        (Some(a), Some(b)) => a.bits() == b.bits(),
        _ => false,
    };
    Ok(SessionReport {
        n_trains,
        n_slots: slots,
        n_events: bob.n_events,
        sifted_len: bob.sifted_len,
        qber: bob.qber_estimate,
        raw_rate_hz: per_slot(bob.n_events as f64),
        sifted_rate_hz: per_slot(bob.sifted_len as f64),
        final_rate_hz: per_slot(final_len as f64),
        final_len,
        aborted_stage: bob.aborted.as_ref().map(|(stage, _)| *stage),
        keys_match,
        duty_factor: eff.duty_factor,
        effective_rep_rate_hz: eff.hz,
        alice,
        bob,
    })
}
