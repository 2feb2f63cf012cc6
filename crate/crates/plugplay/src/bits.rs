//! Seed plumbing shared by the simulator and the protocol endpoints.
//!
//! Both sides of a session must regenerate identical random streams from
//! the same seeds, so every consumer goes through these helpers instead of
//! rolling its own draw order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::qubit::{Basis, QuantumSymbol};

/// Derives `K` independent sub-seeds from one master seed.
pub(crate) fn subseeds<const K: usize>(master: u64) -> [u64; K] {
    let mut rng = ChaCha12Rng::seed_from_u64(master);
    let mut out = [0u64; K];
    for s in out.iter_mut() {
        *s = rng.next_u64();
    }
    out
}

/// Buffered single-bit draws from a seeded stream.
///
/// One `next_u64` feeds 64 bit draws, least significant bit first. The
/// draw order is part of the wire-level contract between endpoints: the
/// sender's preparation stream and the receiver's co-simulation replay the
/// exact same sequence.
pub(crate) struct BitSource {
    rng: ChaCha12Rng,
    cache: u64,
    left: u32,
}

impl BitSource {
    pub(crate) fn new(seed: u64) -> BitSource {
        BitSource { rng: ChaCha12Rng::seed_from_u64(seed), cache: 0, left: 0 }
    }

    pub(crate) fn bit(&mut self) -> bool {
        if self.left == 0 {
            self.cache = self.rng.next_u64();
            self.left = 64;
        }
        let b = self.cache & 1 == 1;
        self.cache >>= 1;
        self.left -= 1;
        b
    }

    pub(crate) fn basis(&mut self) -> Basis {
        if self.bit() {
            Basis::B1
        } else {
            Basis::B0
        }
    }

    /// Per-slot symbol draw: basis first, then bit.
    pub(crate) fn symbol(&mut self) -> QuantumSymbol {
        let basis = self.basis();
        let bit = self.bit();
        QuantumSymbol { basis, bit }
    }
}

/// Packs bits most significant first, zero-padding the last byte.
///
/// The padding rule is load-bearing: `unpack_bits` rejects nonzero pad
/// bits, which catches a desynchronized stream early instead of letting a
/// corrupted tail masquerade as key material.
pub(crate) fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; (bits.len() + 7) / 8];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

/// Inverse of [`pack_bits`]. `None` on short input, excess input, or
/// nonzero padding.
pub(crate) fn unpack_bits(bytes: &[u8], n: usize) -> Option<Vec<bool>> {
    if bytes.len() != (n + 7) / 8 {
        return None;
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(bytes[i / 8] & (0x80 >> (i % 8)) != 0);
    }
    for i in n..bytes.len() * 8 {
        if bytes[i / 8] & (0x80 >> (i % 8)) != 0 {
            return None;
        }
    }
    Some(out)
}

pub(crate) fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_be_bytes());
}

pub(crate) fn read_u32(buf: &[u8], at: usize) -> Option<u32> {
    let end = at.checked_add(4)?;
    Some(u32::from_be_bytes(buf.get(at..end)?.try_into().ok()?))
}

pub(crate) fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_be_bytes());
}

pub(crate) fn read_u64(buf: &[u8], at: usize) -> Option<u64> {
    let end = at.checked_add(8)?;
    Some(u64::from_be_bytes(buf.get(at..end)?.try_into().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = BitSource::new(99);
        let mut b = BitSource::new(99);
        for _ in 0..1000 {
            assert_eq!(a.bit(), b.bit());
        }
    }

    #[test]
    fn subseeds_are_distinct_and_stable() {
        let s1: [u64; 5] = subseeds(42);
        let s2: [u64; 5] = subseeds(42);
        assert_eq!(s1, s2);
        for i in 0..5 {
            for j in i + 1..5 {
                assert_ne!(s1[i], s1[j]);
            }
        }
    }

    #[test]
    fn pack_unpack_round_trip() {
        for n in [0usize, 1, 7, 8, 9, 64, 65, 1000] {
            let bits: Vec<bool> = (0..n).map(|i| (i * 7 + n) % 3 == 0).collect();
            let packed = pack_bits(&bits);
            assert_eq!(packed.len(), (n + 7) / 8);
            assert_eq!(unpack_bits(&packed, n).unwrap(), bits);
        }
    }

    #[test]
    fn pack_is_msb_first() {
        assert_eq!(pack_bits(&[true]), vec![0x80]);
        assert_eq!(pack_bits(&[false, true, false, false, false, false, false, false, true]), vec![0x40, 0x80]);
    }

    #[test]
    fn unpack_rejects_bad_padding_and_lengths() {
        assert!(unpack_bits(&[0x80], 0).is_none());
        assert!(unpack_bits(&[0x01], 7).is_none());
        assert!(unpack_bits(&[0x00, 0x00], 8).is_none());
        assert!(unpack_bits(&[], 1).is_none());
    }

    #[test]
    fn integer_round_trips() {
        let mut buf = Vec::new();
        push_u32(&mut buf, 0xDEAD_BEEF);
        push_u64(&mut buf, 0x0123_4567_89AB_CDEF);
        assert_eq!(read_u32(&buf, 0), Some(0xDEAD_BEEF));
        assert_eq!(read_u64(&buf, 4), Some(0x0123_4567_89AB_CDEF));
        assert_eq!(read_u32(&buf, 5), Some(0x2345_6789));
        assert_eq!(read_u64(&buf, 5), None);
        assert_eq!(read_u32(&buf, usize::MAX), None);
    }
}
