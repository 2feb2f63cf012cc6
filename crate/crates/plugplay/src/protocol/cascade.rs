//! Interactive parity reconciliation (Cascade).
//!
//! The driver (Bob, who holds the noisy key) splits his key into blocks,
//! asks the responder for each block's parity and binary-searches every
//! odd block down to a single wrong bit. Later passes reshuffle the key
//! so that errors masked by pairing in one pass land in different blocks
//! of another; each correction retroactively toggles the parity of every
//! block it belongs to, which can expose further errors in earlier
//! passes (the cascade). All corrections happen on the driver's side;
//! the responder only answers parity queries over agreed permutations.
//!
//! Every disclosed parity is one bit of leakage and is tallied both in
//! the returned [`ReconcileSummary`] and in each key's leak ledger.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::protocol::keybuf::{KeyBuffer, KeyStage};
use crate::protocol::wire::{AbortMsg, BitsMsg, ParityQueryMsg};
use crate::protocol::ProtocolError;
use crate::transport::{memory_pair, Channel, MessageType};

/// Tuning knobs for the reconciliation loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeParams {
    /// Number of shuffle-and-sweep passes.
    pub passes: u32,
    /// First-pass blocks hold roughly this many bits per expected error.
    pub initial_block_coeff: f64,
}

impl Default for CascadeParams {
    fn default() -> Self {
        CascadeParams {
            passes: 4,
            initial_block_coeff: 0.73,
        }
    }
}

impl CascadeParams {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(1..=16).contains(&self.passes) {
            return Err(ProtocolError::BadParameter {
                name: "passes",
                value: self.passes as f64,
            });
        }
        if !self.initial_block_coeff.is_finite() || self.initial_block_coeff <= 0.0 {
            return Err(ProtocolError::BadParameter {
                name: "initial_block_coeff",
                value: self.initial_block_coeff,
            });
        }
        Ok(())
    }

    /// First-pass block length for a key of `n` bits. Roughly
    /// `coeff / qber` so a block holds one error on average; a clean
    /// estimate degenerates to one block per pass.
    pub fn initial_block_len(&self, qber_estimate: f64, n: usize) -> usize {
        if n == 0 {
            return 1;
        }
        if !(qber_estimate > 0.0) {
            return n;
        }
        let raw = (self.initial_block_coeff / qber_estimate).ceil();
        if !raw.is_finite() || raw >= n as f64 {
            n
        } else {
            (raw as usize).max(1)
        }
    }
}

/// What reconciliation cost and achieved.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReconcileSummary {
    /// Total parity bits disclosed.
    pub parity_bits: u64,
    /// Parity bits from full block sweeps.
    pub block_parity_bits: u64,
    /// Parity bits from binary searches.
    pub search_parity_bits: u64,
    /// Bits flipped on the driver's side.
    pub corrected: u64,
    /// Passes executed.
    pub passes: u32,
}

/// Permutation used in a given pass: `perm[permuted] = real`. Pass 0
/// works in natural order regardless of the seed, so the first sweep
/// maps directly onto the raw key.
fn pass_permutation(n: usize, pass: u32, perm_seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    if pass > 0 {
        perm.shuffle(&mut ChaCha12Rng::seed_from_u64(perm_seed));
    }
    perm
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (permuted, &real) in perm.iter().enumerate() {
        inv[real] = permuted;
    }
    inv
}

fn seg_parity(bits: &[bool], perm: &[usize], start: usize, len: usize) -> bool {
    let mut p = false;
    for &real in &perm[start..start + len] {
        p ^= bits[real];
    }
    p
}

fn block_ranges(n: usize, block_len: usize) -> Vec<(u64, u64)> {
    (0..n)
        .step_by(block_len)
        .map(|s| (s as u64, block_len.min(n - s) as u64))
        .collect()
}

fn recv_parities<C: Channel>(channel: &mut C, expect: usize) -> Result<Vec<bool>, ProtocolError> {
    let (ty, payload) = channel.recv()?;
    match ty {
        MessageType::ParityReply => {
            let msg = BitsMsg::decode(&payload, "parity reply")?;
            if msg.bits.len() != expect {
                return Err(ProtocolError::Misaligned("parity reply length mismatch"));
            }
            Ok(msg.bits)
        }
        MessageType::Abort => {
            let msg = AbortMsg::decode(&payload)?;
            Err(ProtocolError::PeerAbort {
                stage: msg.stage,
                reason: msg.reason,
            })
        }
        other => Err(ProtocolError::Unexpected {
            got: other,
            expected: MessageType::ParityReply,
        }),
    }
}

/// One pass as the driver sees it. Alice's parities are fixed for the
/// whole run; `mismatch` tracks whether the driver's current block
/// parity still differs from hers and is updated on every correction.
struct PassState {
    block_len: usize,
    perm: Vec<usize>,
    inv: Vec<usize>,
    alice_parity: Vec<bool>,
    mismatch: Vec<bool>,
}

/// Driver half: repairs `key` in place against the responder's key.
pub(crate) fn drive_reconcile<C: Channel>(
    key: &mut KeyBuffer,
    qber_estimate: f64,
    params: &CascadeParams,
    seed: u64,
    channel: &mut C,
) -> Result<ReconcileSummary, ProtocolError> {
    params.validate()?;
    if key.stage() != KeyStage::Sifted {
        return Err(ProtocolError::WrongStage {
            expected: KeyStage::Sifted,
            got: key.stage(),
        });
    }
    let n = key.len();
    let mut summary = ReconcileSummary {
        passes: params.passes,
        ..ReconcileSummary::default()
    };
    if n == 0 {
        channel.send(
            MessageType::ParityQuery,
            &ParityQueryMsg::Done { ok: true }.encode(),
        )?;
        key.advance(KeyStage::Reconciled)?;
        return Ok(summary);
    }

    let initial = params.initial_block_len(qber_estimate, n);
    let mut seed_rng = ChaCha12Rng::seed_from_u64(seed);
    let mut states: Vec<PassState> = Vec::with_capacity(params.passes as usize);
    // Blocks whose driver parity currently disagrees with the responder.
    let mut odd: BTreeSet<(usize, usize)> = BTreeSet::new();

    let mut block_len = initial;
    for pass in 0..params.passes {
        let perm_seed: u64 = seed_rng.gen();
        channel.send(
            MessageType::ParityQuery,
            &ParityQueryMsg::PassInit {
                pass,
                block_len: block_len as u64,
                perm_seed,
            }
            .encode(),
        )?;
        let perm = pass_permutation(n, pass, perm_seed);
        let inv = invert(&perm);
        let ranges = block_ranges(n, block_len);
        channel.send(
            MessageType::ParityQuery,
            &ParityQueryMsg::Segments {
                pass,
                ranges: ranges.clone(),
            }
            .encode(),
        )?;
        let alice_parity = recv_parities(channel, ranges.len())?;
        summary.parity_bits += ranges.len() as u64;
        summary.block_parity_bits += ranges.len() as u64;
        key.note_leak(ranges.len() as u64);

        let mismatch: Vec<bool> = ranges
            .iter()
            .zip(&alice_parity)
            .map(|(&(s, l), &ap)| seg_parity(key.bits(), &perm, s as usize, l as usize) != ap)
            .collect();
        let pass_idx = states.len();
        for (b, &m) in mismatch.iter().enumerate() {
            if m {
                odd.insert((pass_idx, b));
            }
        }
        states.push(PassState {
            block_len,
            perm,
            inv,
            alice_parity,
            mismatch,
        });

        // Drain every odd block before shuffling again. Corrections can
        // re-open blocks in earlier passes; the set keeps them all.
        while let Some(&(q, b)) = odd.iter().next() {
            let st = &states[q];
            let block_start = b * st.block_len;
            let mut start = block_start;
            let mut len = st.block_len.min(n - block_start);
            let mut alice_par = st.alice_parity[b];
            while len > 1 {
                let left = len / 2;
                channel.send(
                    MessageType::ParityQuery,
                    &ParityQueryMsg::Segments {
                        pass: q as u32,
                        ranges: vec![(start as u64, left as u64)],
                    }
                    .encode(),
                )?;
                let bits = recv_parities(channel, 1)?;
                summary.parity_bits += 1;
                summary.search_parity_bits += 1;
                key.note_leak(1);
                let a_left = bits[0];
                let my_left = seg_parity(key.bits(), &states[q].perm, start, left);
                if a_left != my_left {
                    len = left;
                    alice_par = a_left;
                } else {
                    start += left;
                    len -= left;
                    alice_par ^= a_left;
                }
            }
            let real = states[q].perm[start];
            if key.bits()[real] == alice_par {
                // The odd-parity invariant broke: the responder answered
                // inconsistently.
                return Err(ProtocolError::Misaligned(
                    "parity search converged on agreeing bits",
                ));
            }
            key.flip(real);
            summary.corrected += 1;
            for (r, st) in states.iter_mut().enumerate() {
                let pb = st.inv[real] / st.block_len;
                st.mismatch[pb] = !st.mismatch[pb];
                if st.mismatch[pb] {
                    odd.insert((r, pb));
                } else {
                    odd.remove(&(r, pb));
                }
            }
        }

        block_len = block_len.saturating_mul(2).min(n);
    }

    channel.send(
        MessageType::ParityQuery,
        &ParityQueryMsg::Done { ok: true }.encode(),
    )?;
    key.advance(KeyStage::Reconciled)?;
    Ok(summary)
}

/// Responder half: answers parity queries over `key` until the driver
/// signals completion. The key itself is never modified.
pub(crate) fn respond_reconcile<C: Channel>(
    key: &mut KeyBuffer,
    channel: &mut C,
) -> Result<ReconcileSummary, ProtocolError> {
    if key.stage() != KeyStage::Sifted {
        return Err(ProtocolError::WrongStage {
            expected: KeyStage::Sifted,
            got: key.stage(),
        });
    }
    let n = key.len();
    // The driver's searches revisit old passes, so every announced
    // permutation stays live until the end.
    let mut perms: Vec<Vec<usize>> = Vec::new();
    let mut summary = ReconcileSummary::default();
    loop {
        let (ty, payload) = channel.recv()?;
        match ty {
            MessageType::ParityQuery => match ParityQueryMsg::decode(&payload)? {
                ParityQueryMsg::PassInit {
                    pass,
                    block_len: _,
                    perm_seed,
                } => {
                    if pass as usize != perms.len() {
                        return Err(ProtocolError::Misaligned("passes announced out of order"));
                    }
                    perms.push(pass_permutation(n, pass, perm_seed));
                    summary.passes = summary.passes.max(pass + 1);
                }
                ParityQueryMsg::Segments { pass, ranges } => {
                    let perm = perms
                        .get(pass as usize)
                        .ok_or(ProtocolError::Misaligned("parity query names an unknown pass"))?;
                    let mut bits = Vec::with_capacity(ranges.len());
                    for &(start, len) in &ranges {
                        let s = usize::try_from(start)
                            .map_err(|_| ProtocolError::Misaligned("parity segment out of range"))?;
                        let l = usize::try_from(len)
                            .map_err(|_| ProtocolError::Misaligned("parity segment out of range"))?;
                        if l == 0 || s.checked_add(l).map_or(true, |end| end > n) {
                            return Err(ProtocolError::Misaligned("parity segment out of range"));
                        }
                        bits.push(seg_parity(key.bits(), perm, s, l));
                    }
                    let count = bits.len() as u64;
                    channel.send(MessageType::ParityReply, &BitsMsg { bits }.encode())?;
                    summary.parity_bits += count;
                    key.note_leak(count);
                }
                ParityQueryMsg::Done { ok } => {
                    if !ok {
                        return Err(ProtocolError::ResidualMismatch);
                    }
                    break;
                }
            },
            MessageType::Abort => {
                let msg = AbortMsg::decode(&payload)?;
                return Err(ProtocolError::PeerAbort {
                    stage: msg.stage,
                    reason: msg.reason,
                });
            }
            other => {
                return Err(ProtocolError::Unexpected {
                    got: other,
                    expected: MessageType::ParityQuery,
                });
            }
        }
    }
    key.advance(KeyStage::Reconciled)?;
    Ok(summary)
}

/// Runs both reconciliation halves back to back over an in-memory link.
///
/// Alice's key is the reference; Bob's is corrected toward it. Returns
/// the driver's summary. Fails with [`ProtocolError::ResidualMismatch`]
/// if the keys still differ after the last pass, which a session would
/// catch at verification.
pub fn reconcile(
    alice: &mut KeyBuffer,
    bob: &mut KeyBuffer,
    qber_estimate: f64,
    params: &CascadeParams,
    seed: u64,
) -> Result<ReconcileSummary, ProtocolError> {
    params.validate()?;
    if alice.len() != bob.len() {
        return Err(ProtocolError::Misaligned("keys differ in length"));
    }
    let (ca, cb) = memory_pair();
    let (drive_res, respond_res) = std::thread::scope(|scope| {
        let a_ref = &mut *alice;
        let handle = scope.spawn(move || {
            let mut ch = ca;
            respond_reconcile(a_ref, &mut ch)
        });
        let drive_res = {
            let mut ch = cb;
            drive_reconcile(bob, qber_estimate, params, seed, &mut ch)
            // Dropping the driver's channel here unblocks the responder
            // if the drive failed mid-run.
        };
        (drive_res, handle.join().expect("responder thread panicked"))
    });
    let summary = drive_res?;
    respond_res?;
    if alice.bits() != bob.bits() {
        return Err(ProtocolError::ResidualMismatch);
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::index::sample;

    fn random_key(seed: u64, n: usize) -> Vec<bool> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen()).collect()
    }

    fn with_errors(bits: &[bool], seed: u64, count: usize) -> Vec<bool> {
        let mut out = bits.to_vec();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        for i in sample(&mut rng, bits.len(), count) {
            out[i] = !out[i];
        }
        out
    }

    #[test]
    fn pass_zero_is_identity_and_later_passes_shuffle() {
        assert_eq!(pass_permutation(5, 0, 123), vec![0, 1, 2, 3, 4]);
        let p1 = pass_permutation(50, 1, 123);
        assert_ne!(p1, (0..50).collect::<Vec<_>>());
        assert_eq!(p1, pass_permutation(50, 1, 123));
        let mut sorted = p1.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        let inv = invert(&p1);
        for (permuted, &real) in p1.iter().enumerate() {
            assert_eq!(inv[real], permuted);
        }
    }

    #[test]
    fn single_error_costs_three_search_parities() {
        // One error in an 8-bit block: the sweep flags it with one
        // parity, the binary search pins it down in log2(8) = 3 more.
        let bits = random_key(1, 8);
        let mut alice = KeyBuffer::new(bits.clone(), KeyStage::Sifted);
        let mut noisy = bits;
        noisy[5] = !noisy[5];
        let mut bob = KeyBuffer::new(noisy, KeyStage::Sifted);
        let params = CascadeParams {
            passes: 1,
            ..CascadeParams::default()
        };
        let summary = reconcile(&mut alice, &mut bob, 0.0, &params, 7).unwrap();
        assert_eq!(summary.corrected, 1);
        assert_eq!(summary.block_parity_bits, 1);
        assert_eq!(summary.search_parity_bits, 3);
        assert_eq!(summary.parity_bits, 4);
        assert_eq!(alice.bits(), bob.bits());
    }

    #[test]
    fn error_free_key_costs_one_parity_per_pass() {
        let bits = random_key(2, 1000);
        let mut alice = KeyBuffer::new(bits.clone(), KeyStage::Sifted);
        let mut bob = KeyBuffer::new(bits, KeyStage::Sifted);
        let summary =
            reconcile(&mut alice, &mut bob, 0.0, &CascadeParams::default(), 7).unwrap();
        assert_eq!(summary.parity_bits, 4);
        assert_eq!(summary.corrected, 0);
        assert_eq!(alice.leaked_bits(), 4);
        assert_eq!(bob.leaked_bits(), 4);
        assert_eq!(alice.stage(), KeyStage::Reconciled);
        assert_eq!(bob.stage(), KeyStage::Reconciled);
    }

    #[test]
    fn corrects_a_four_percent_error_pattern() {
        let n = 2000;
        let errors = 80;
        let bits = random_key(3, n);
        let mut alice = KeyBuffer::new(bits.clone(), KeyStage::Sifted);
        let mut bob = KeyBuffer::new(with_errors(&bits, 4, errors), KeyStage::Sifted);
        let summary =
            reconcile(&mut alice, &mut bob, 0.04, &CascadeParams::default(), 7).unwrap();
        assert_eq!(alice.bits(), bob.bits());
        assert_eq!(summary.corrected, errors as u64);
        // Leakage should sit a little above the Shannon limit
        // h(0.04) * n = 485 bits but well below twice that.
        assert!(
            summary.parity_bits > 400 && summary.parity_bits < 970,
            "parity bits {}",
            summary.parity_bits
        );
        assert_eq!(
            summary.parity_bits,
            summary.block_parity_bits + summary.search_parity_bits
        );
        assert_eq!(alice.leaked_bits(), summary.parity_bits);
        assert_eq!(bob.leaked_bits(), summary.parity_bits);
    }

    #[test]
    fn assorted_sizes_and_error_counts_converge() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for case in 0..30 {
            let n = rng.gen_range(1..400);
            let errors = rng.gen_range(0..=n / 5);
            let bits = random_key(100 + case, n);
            let mut alice = KeyBuffer::new(bits.clone(), KeyStage::Sifted);
            let mut bob =
                KeyBuffer::new(with_errors(&bits, 200 + case, errors), KeyStage::Sifted);
            let q = (errors as f64 / n as f64).max(0.01);
            let summary = reconcile(&mut alice, &mut bob, q, &CascadeParams::default(), case)
                .unwrap_or_else(|e| panic!("case {case} (n={n}, errors={errors}): {e}"));
            assert_eq!(alice.bits(), bob.bits(), "case {case}");
            assert_eq!(summary.corrected, errors as u64, "case {case}");
        }
    }

    #[test]
    fn empty_keys_reconcile_for_free() {
        let mut alice = KeyBuffer::new(Vec::new(), KeyStage::Sifted);
        let mut bob = KeyBuffer::new(Vec::new(), KeyStage::Sifted);
        let summary =
            reconcile(&mut alice, &mut bob, 0.1, &CascadeParams::default(), 7).unwrap();
        assert_eq!(summary.parity_bits, 0);
        assert_eq!(alice.stage(), KeyStage::Reconciled);
    }

    #[test]
    fn rejects_misuse() {
        let mut alice = KeyBuffer::new(vec![true; 4], KeyStage::Raw);
        let mut bob = KeyBuffer::new(vec![true; 4], KeyStage::Raw);
        let err = reconcile(&mut alice, &mut bob, 0.0, &CascadeParams::default(), 7).unwrap_err();
        assert!(matches!(err, ProtocolError::WrongStage { .. }));

        let mut a = KeyBuffer::new(vec![true; 4], KeyStage::Sifted);
        let mut b = KeyBuffer::new(vec![true; 5], KeyStage::Sifted);
        let err = reconcile(&mut a, &mut b, 0.0, &CascadeParams::default(), 7).unwrap_err();
        assert!(matches!(err, ProtocolError::Misaligned(_)));

        let bad = CascadeParams {
            passes: 0,
            ..CascadeParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn initial_block_length_tracks_the_estimate() {
        let params = CascadeParams::default();
        assert_eq!(params.initial_block_len(0.04, 10_000), 19);
        assert_eq!(params.initial_block_len(0.0, 10_000), 10_000);
        assert_eq!(params.initial_block_len(0.5, 10_000), 2);
        // Tiny keys clamp to the key itself.
        assert_eq!(params.initial_block_len(0.001, 100), 100);
        assert_eq!(params.initial_block_len(0.04, 0), 1);
    }
}
