//! Payload layouts for the protocol's message types.
//!
//! Counts and integers are 32/64-bit big-endian; bit strings open with a
//! 32-bit bit count and are packed most significant bit first with zero
//! padding (the channel auditor relies on that leading count). Every
//! decoder checks the exact payload length and rejects anything else, so
//! a desynchronized or tampered stream surfaces as a protocol error
//! instead of bad key material.

use crate::bits::{pack_bits, push_u32, push_u64, read_u32, read_u64, unpack_bits};
use crate::protocol::{AbortStage, ProtocolError};
use crate::qubit::Basis;
use crate::sim::TransmissionSeeds;

fn wire_err(what: &'static str) -> ProtocolError {
    ProtocolError::Wire { what }
}

/// Opening handshake: proves both ends run the same experiment and hands
/// the receiver the seeds of the co-simulated quantum layer.
///
/// The seeds stand in for the physical channel itself; in a deployment
/// nothing key-bearing would ever ride the classical link like this.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct SessionConfigMsg {
    pub config_digest: [u8; 32],
    pub n_trains: u64,
    pub seeds: TransmissionSeeds,
}

impl SessionConfigMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(&self.config_digest);
        push_u64(&mut out, self.n_trains);
        push_u64(&mut out, self.seeds.alice_symbols);
        push_u64(&mut out, self.seeds.bob_bases);
        push_u64(&mut out, self.seeds.outcomes);
        out
    }

    pub fn decode(payload: &[u8]) -> Result<SessionConfigMsg, ProtocolError> {
        if payload.len() != 64 {
            return Err(wire_err("session config"));
        }
        Ok(SessionConfigMsg {
            config_digest: payload[..32].try_into().unwrap(),
            n_trains: read_u64(payload, 32).unwrap(),
            seeds: TransmissionSeeds {
                alice_symbols: read_u64(payload, 40).unwrap(),
                bob_bases: read_u64(payload, 48).unwrap(),
                outcomes: read_u64(payload, 56).unwrap(),
            },
        })
    }
}

/// Receiver's detections: which slots fired and in which basis each was
/// measured. Slots must be strictly ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct DetectionsMsg {
    pub entries: Vec<(u64, Basis)>,
}

impl DetectionsMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.entries.len() * 9);
        push_u32(&mut out, self.entries.len() as u32);
        for &(slot, basis) in &self.entries {
            push_u64(&mut out, slot);
            out.push(basis.code());
        }
        out
    }

    pub fn decode(payload: &[u8]) -> Result<DetectionsMsg, ProtocolError> {
        let count = read_u32(payload, 0).ok_or_else(|| wire_err("detections"))? as usize;
        if payload.len() != 4 + count * 9 {
            return Err(wire_err("detections"));
        }
        let mut entries = Vec::with_capacity(count);
        let mut prev: Option<u64> = None;
        for i in 0..count {
            let at = 4 + i * 9;
            let slot = read_u64(payload, at).unwrap();
            let basis = Basis::from_code(payload[at + 8]).ok_or_else(|| wire_err("detections"))?;
            if prev.is_some_and(|p| slot <= p) {
                return Err(wire_err("detections"));
            }
            prev = Some(slot);
            entries.push((slot, basis));
        }
        Ok(DetectionsMsg { entries })
    }
}

/// Sender's keep/drop verdict, one bit per reported detection, in the
/// same order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct KeepMaskMsg {
    pub keep: Vec<bool>,
}

impl KeepMaskMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        push_u32(&mut out, self.keep.len() as u32);
        out.extend_from_slice(&pack_bits(&self.keep));
        out
    }

    pub fn decode(payload: &[u8]) -> Result<KeepMaskMsg, ProtocolError> {
        let count = read_u32(payload, 0).ok_or_else(|| wire_err("keep mask"))? as usize;
        let keep = unpack_bits(&payload[4..], count).ok_or_else(|| wire_err("keep mask"))?;
        Ok(KeepMaskMsg { keep })
    }
}

/// Positions in the sifted key sacrificed for error estimation, strictly
/// ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct SampleIndicesMsg {
    pub indices: Vec<u64>,
}

impl SampleIndicesMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.indices.len() * 8);
        push_u32(&mut out, self.indices.len() as u32);
        for &i in &self.indices {
            push_u64(&mut out, i);
        }
        out
    }

    pub fn decode(payload: &[u8]) -> Result<SampleIndicesMsg, ProtocolError> {
        let count = read_u32(payload, 0).ok_or_else(|| wire_err("sample indices"))? as usize;
        if payload.len() != 4 + count * 8 {
            return Err(wire_err("sample indices"));
        }
        let mut indices = Vec::with_capacity(count);
        for i in 0..count {
            let v = read_u64(payload, 4 + i * 8).unwrap();
            if indices.last().is_some_and(|&p| v <= p) {
                return Err(wire_err("sample indices"));
            }
            indices.push(v);
        }
        Ok(SampleIndicesMsg { indices })
    }
}

/// A disclosed bit string: sampled key bits or parity answers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BitsMsg {
    pub bits: Vec<bool>,
}

impl BitsMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        push_u32(&mut out, self.bits.len() as u32);
        out.extend_from_slice(&pack_bits(&self.bits));
        out
    }

    pub fn decode(payload: &[u8], what: &'static str) -> Result<BitsMsg, ProtocolError> {
        let count = read_u32(payload, 0).ok_or(ProtocolError::Wire { what })? as usize;
        let bits = unpack_bits(&payload[4..], count).ok_or(ProtocolError::Wire { what })?;
        Ok(BitsMsg { bits })
    }
}

/// The reconciliation driver's questions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum ParityQueryMsg {
    /// Announces a pass: its block length and the seed of the shuffle
    /// both sides apply before splitting into blocks. Pass 0 is never
    /// shuffled; its seed is ignored.
    PassInit { pass: u32, block_len: u64, perm_seed: u64 },
    /// Asks for the parity of each `(start, len)` range of the named
    /// pass's shuffled key. Binary searches revisit earlier passes, so
    /// the pass tag cannot be implied by the last `PassInit`.
    Segments { pass: u32, ranges: Vec<(u64, u64)> },
    /// Ends reconciliation; `ok` is false when the driver gave up.
    Done { ok: bool },
}

impl ParityQueryMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            ParityQueryMsg::PassInit { pass, block_len, perm_seed } => {
                out.push(0);
                push_u32(&mut out, *pass);
                push_u64(&mut out, *block_len);
                push_u64(&mut out, *perm_seed);
            }
            ParityQueryMsg::Segments { pass, ranges } => {
                out.push(1);
                push_u32(&mut out, *pass);
                push_u32(&mut out, ranges.len() as u32);
                for &(start, len) in ranges {
                    push_u64(&mut out, start);
                    push_u64(&mut out, len);
                }
            }
            ParityQueryMsg::Done { ok } => {
                out.push(2);
                out.push(*ok as u8);
            }
        }
        out
    }

    pub fn decode(payload: &[u8]) -> Result<ParityQueryMsg, ProtocolError> {
        let bad = || wire_err("parity query");
        match payload.first() {
            Some(0) => {
                if payload.len() != 21 {
                    return Err(bad());
                }
                Ok(ParityQueryMsg::PassInit {
                    pass: read_u32(payload, 1).unwrap(),
                    block_len: read_u64(payload, 5).unwrap(),
                    perm_seed: read_u64(payload, 13).unwrap(),
                })
            }
            Some(1) => {
                let pass = read_u32(payload, 1).ok_or_else(bad)?;
                let count = read_u32(payload, 5).ok_or_else(bad)? as usize;
                if payload.len() != 9 + count * 16 {
                    return Err(bad());
                }
                let mut ranges = Vec::with_capacity(count);
                for i in 0..count {
                    let at = 9 + i * 16;
                    ranges.push((read_u64(payload, at).unwrap(), read_u64(payload, at + 8).unwrap()));
                }
                Ok(ParityQueryMsg::Segments { pass, ranges })
            }
            Some(2) => {
                if payload.len() != 2 || payload[1] > 1 {
                    return Err(bad());
                }
                Ok(ParityQueryMsg::Done { ok: payload[1] == 1 })
            }
            _ => Err(bad()),
        }
    }
}

/// Public seed and agreed output length for the final hashing step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct HashSeedMsg {
    pub seed: u64,
    pub out_len: u64,
}

impl HashSeedMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16);
        push_u64(&mut out, self.seed);
        push_u64(&mut out, self.out_len);
        out
    }

    pub fn decode(payload: &[u8]) -> Result<HashSeedMsg, ProtocolError> {
        if payload.len() != 16 {
            return Err(wire_err("hash seed"));
        }
        Ok(HashSeedMsg { seed: read_u64(payload, 0).unwrap(), out_len: read_u64(payload, 8).unwrap() })
    }
}

/// Truncated digest of the corrected key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct KeyHashMsg {
    pub digest: [u8; 8],
}

impl KeyHashMsg {
    pub fn encode(&self) -> Vec<u8> {
        self.digest.to_vec()
    }

    pub fn decode(payload: &[u8]) -> Result<KeyHashMsg, ProtocolError> {
        Ok(KeyHashMsg { digest: payload.try_into().map_err(|_| wire_err("key hash"))? })
    }
}

/// Session abandonment notice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct AbortMsg {
    pub stage: AbortStage,
    pub reason: String,
}

impl AbortMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.reason.len());
        out.push(self.stage.code());
        out.extend_from_slice(self.reason.as_bytes());
        out
    }

    pub fn decode(payload: &[u8]) -> Result<AbortMsg, ProtocolError> {
        let (&code, rest) = payload.split_first().ok_or_else(|| wire_err("abort"))?;
        let stage = AbortStage::from_code(code).ok_or_else(|| wire_err("abort"))?;
        let reason = std::str::from_utf8(rest).map_err(|_| wire_err("abort"))?.to_string();
        Ok(AbortMsg { stage, reason })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_config_round_trip() {
        let m = SessionConfigMsg {
            config_digest: [7; 32],
            n_trains: 123456789,
            seeds: TransmissionSeeds { alice_symbols: 1, bob_bases: 2, outcomes: u64::MAX },
        };
        let bytes = m.encode();
        assert_eq!(bytes.len(), 64);
        assert_eq!(SessionConfigMsg::decode(&bytes).unwrap(), m);
        assert!(SessionConfigMsg::decode(&bytes[..63]).is_err());
    }

    #[test]
    fn detections_round_trip_and_ordering() {
        let m = DetectionsMsg {
            entries: vec![(0, Basis::B0), (5, Basis::B1), (1000, Basis::B0)],
        };
        let bytes = m.encode();
        assert_eq!(DetectionsMsg::decode(&bytes).unwrap(), m);

        let unsorted = DetectionsMsg { entries: vec![(5, Basis::B0), (5, Basis::B1)] };
        assert!(DetectionsMsg::decode(&unsorted.encode()).is_err());

        let mut bad_basis = m.encode();
        bad_basis[4 + 8] = 9;
        assert!(DetectionsMsg::decode(&bad_basis).is_err());
    }

    #[test]
    fn keep_mask_round_trip() {
        let m = KeepMaskMsg { keep: vec![true, false, true, true, false, true, false, false, true] };
        assert_eq!(KeepMaskMsg::decode(&m.encode()).unwrap(), m);
        let empty = KeepMaskMsg { keep: vec![] };
        assert_eq!(KeepMaskMsg::decode(&empty.encode()).unwrap(), empty);
        // Nonzero padding is rejected, not silently dropped.
        let mut bytes = m.encode();
        *bytes.last_mut().unwrap() |= 0x01;
        assert!(KeepMaskMsg::decode(&bytes).is_err());
    }

    #[test]
    fn sample_indices_round_trip_and_ordering() {
        let m = SampleIndicesMsg { indices: vec![3, 17, 18, 4000000000000] };
        assert_eq!(SampleIndicesMsg::decode(&m.encode()).unwrap(), m);
        let dup = SampleIndicesMsg { indices: vec![3, 3] };
        assert!(SampleIndicesMsg::decode(&dup.encode()).is_err());
    }

    #[test]
    fn bits_round_trip() {
        let m = BitsMsg { bits: vec![true; 13] };
        assert_eq!(BitsMsg::decode(&m.encode(), "t").unwrap(), m);
        assert!(BitsMsg::decode(&[0, 0, 0, 9, 0xFF], "t").is_err());
    }

    #[test]
    fn parity_query_round_trips() {
        for m in [
            ParityQueryMsg::PassInit { pass: 2, block_len: 30, perm_seed: 99 },
            ParityQueryMsg::Segments { pass: 1, ranges: vec![(0, 15), (15, 15), (30, 7)] },
            ParityQueryMsg::Segments { pass: 0, ranges: vec![] },
            ParityQueryMsg::Done { ok: true },
            ParityQueryMsg::Done { ok: false },
        ] {
            assert_eq!(ParityQueryMsg::decode(&m.encode()).unwrap(), m);
        }
        assert!(ParityQueryMsg::decode(&[]).is_err());
        assert!(ParityQueryMsg::decode(&[3]).is_err());
        assert!(ParityQueryMsg::decode(&[2, 2]).is_err());
    }

    #[test]
    fn hash_seed_and_key_hash_round_trip() {
        let h = HashSeedMsg { seed: 42, out_len: 4253 };
        assert_eq!(HashSeedMsg::decode(&h.encode()).unwrap(), h);
        let k = KeyHashMsg { digest: [1, 2, 3, 4, 5, 6, 7, 8] };
        assert_eq!(KeyHashMsg::decode(&k.encode()).unwrap(), k);
        assert!(KeyHashMsg::decode(&[0; 7]).is_err());
    }

    #[test]
    fn abort_round_trip() {
        let m = AbortMsg { stage: AbortStage::Estimate, reason: "eavesdropping assumed".into() };
        assert_eq!(AbortMsg::decode(&m.encode()).unwrap(), m);
        assert!(AbortMsg::decode(&[]).is_err());
        assert!(AbortMsg::decode(&[200, b'x']).is_err());
    }
}
