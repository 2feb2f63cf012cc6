//! Privacy amplification by universal hashing.
//!
//! After reconciliation both keys are equal but partly known: the public
//! discussion disclosed parities and digests, and the channel itself may
//! have leaked. Compressing the key through a random Toeplitz matrix
//! leaves an eavesdropper with a negligible amount of information on the
//! shorter output, at the price of throwing those bits away. The matrix
//! seed is public; only its dimensions have to be agreed on.

use sha2::{Digest, Sha256};

use crate::analytic;
use crate::bits::{pack_bits, BitSource};
use crate::protocol::keybuf::{KeyBuffer, KeyStage};
use crate::protocol::session::SessionPolicy;
use crate::protocol::ProtocolError;

/// Multiplies the key by a pseudo-random Toeplitz matrix over GF(2).
///
/// The matrix has `out_len` rows, `bits.len()` columns and is fully
/// determined by its first row and first column, both drawn from the
/// keyed generator behind `seed`. Both endpoints call this with the same
/// seed and length and obtain the same output.
pub fn toeplitz_hash(bits: &[bool], out_len: usize, seed: u64) -> Vec<bool> {
    if out_len == 0 {
        return Vec::new();
    }
    let n = bits.len();
    // Diagonal stream d: entry (j, i) of the matrix is d[i + j], so
    // consecutive rows are shifts of one shared sequence.
    let mut src = BitSource::new(seed);
    let diag: Vec<bool> = (0..n + out_len - 1).map(|_| src.bit()).collect();
    (0..out_len)
        .map(|j| {
            let mut acc = false;
            for (i, &bit) in bits.iter().enumerate() {
                acc ^= diag[i + j] & bit;
            }
            acc
        })
        .collect()
}

/// Final key length for a reconciled key of `n` bits.
///
/// The compression fraction comes from the measured error rate; on top
/// of it every publicly disclosed bit (`leaked_bits`) and a fixed safety
/// margin are subtracted outright. Clamped at zero: a key too leaky to
/// survive yields an empty final key, not an error.
pub fn amplified_len(
    n: usize,
    qber: f64,
    leaked_bits: u64,
    margin_bits: u64,
) -> Result<usize, ProtocolError> {
    let pa = analytic::pa_fraction(qber)?;
    let kept = (n as f64 * (1.0 - pa)).floor() as i64;
    let out = kept - leaked_bits as i64 - margin_bits as i64;
    Ok(out.max(0) as usize)
}

/// Compresses a reconciled key into the final secret key.
///
/// `leaked_bits` is what the public discussion disclosed about this key
/// (parity and digest bits; sampled bits are already gone from the
/// buffer). The seed is public and chosen by one endpoint. Deterministic:
/// equal inputs give bit-identical final keys on both ends.
pub fn privacy_amplify(
    buffer: &KeyBuffer,
    qber: f64,
    leaked_bits: u64,
    policy: &SessionPolicy,
    public_seed: u64,
) -> Result<KeyBuffer, ProtocolError> {
    if buffer.stage() != KeyStage::Reconciled {
        return Err(ProtocolError::WrongStage {
            expected: KeyStage::Reconciled,
            got: buffer.stage(),
        });
    }
    let out_len = amplified_len(buffer.len(), qber, leaked_bits, policy.pa_safety_margin_bits)?;
    let bits = toeplitz_hash(buffer.bits(), out_len, public_seed);
    let mut out = KeyBuffer::new(bits, KeyStage::Final);
    out.note_leak(buffer.leaked_bits());
    Ok(out)
}

/// Short comparison digest of a key: first 8 bytes of SHA-256 over the
/// length and the packed bits.
pub(crate) fn key_digest(bits: &[bool]) -> [u8; 8] {
    let mut h = Sha256::new();
    h.update((bits.len() as u64).to_be_bytes());
    h.update(pack_bits(bits));
    let full = h.finalize();
    full[..8].try_into().expect("sha256 yields 32 bytes")
}
