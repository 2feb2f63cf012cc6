//! Key material as it moves through the post-processing pipeline.

use crate::bits::pack_bits;
use crate::protocol::ProtocolError;

/// Pipeline stage of a key buffer. Transitions only ever move forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum KeyStage {
    /// Detector output, before basis comparison.
    Raw,
    /// Compatible-basis bits only.
    Sifted,
    /// After interactive error correction: both ends hold the same bits,
    /// some of which the public discussion has partially exposed.
    Reconciled,
    /// After privacy amplification: the shared secret.
    Final,
}

impl KeyStage {
    pub fn name(self) -> &'static str {
        match self {
            KeyStage::Raw => "raw",
            KeyStage::Sifted => "sifted",
            KeyStage::Reconciled => "reconciled",
            KeyStage::Final => "final",
        }
    }
}

/// An ordered bit string plus the two facts post-processing must track
/// about it: how far along the pipeline it is, and how many key-dependent
/// bits have been spoken about it on the public channel.
///
/// The leak ledger only grows; there is no API to forget a disclosure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyBuffer {
    bits: Vec<bool>,
    stage: KeyStage,
    leaked_bits: u64,
}

impl KeyBuffer {
    pub fn new(bits: Vec<bool>, stage: KeyStage) -> KeyBuffer {
        KeyBuffer { bits, stage, leaked_bits: 0 }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn stage(&self) -> KeyStage {
        self.stage
    }

    /// Key-dependent bits disclosed publicly so far: samples read out
    /// loud (by either side), parities, verification digests.
    pub fn leaked_bits(&self) -> u64 {
        self.leaked_bits
    }

    /// Records `bits` more disclosed bits.
    pub fn note_leak(&mut self, bits: u64) {
        self.leaked_bits += bits;
    }

    /// Moves the buffer forward in the pipeline.
    pub fn advance(&mut self, to: KeyStage) -> Result<(), ProtocolError> {
        if to <= self.stage {
            return Err(ProtocolError::StageRegression { from: self.stage, to });
        }
        self.stage = to;
        Ok(())
    }

    pub(crate) fn flip(&mut self, index: usize) {
        self.bits[index] = !self.bits[index];
    }

    /// Removes the bits at `positions` (strictly ascending) and returns
    /// them in order. Used when sampled bits leave the key.
    pub fn remove_positions(&mut self, positions: &[usize]) -> Result<Vec<bool>, ProtocolError> {
        for w in positions.windows(2) {
            if w[1] <= w[0] {
                return Err(ProtocolError::Misaligned("sample positions must be strictly ascending"));
            }
        }
        if let Some(&last) = positions.last() {
            if last >= self.bits.len() {
                return Err(ProtocolError::SampleTooLarge);
            }
        }
        let mut removed = Vec::with_capacity(positions.len());
        let mut keep = Vec::with_capacity(self.bits.len() - positions.len());
        let mut next = positions.iter().peekable();
        for (i, &b) in self.bits.iter().enumerate() {
            if next.peek() == Some(&&i) {
                removed.push(b);
                next.next();
            } else {
                keep.push(b);
            }
        }
        self.bits = keep;
        Ok(removed)
    }

    /// Export as hex, most significant bit of each byte first, trailing
    /// byte zero-padded.
    pub fn to_hex(&self) -> String {
        pack_bits(&self.bits).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_only_move_forward() {
        let mut k = KeyBuffer::new(vec![true, false], KeyStage::Raw);
        k.advance(KeyStage::Sifted).unwrap();
        k.advance(KeyStage::Reconciled).unwrap();
        assert!(k.advance(KeyStage::Sifted).is_err());
        assert!(k.advance(KeyStage::Reconciled).is_err());
        k.advance(KeyStage::Final).unwrap();
        assert_eq!(k.stage(), KeyStage::Final);
    }

    #[test]
    fn leak_ledger_only_grows() {
        let mut k = KeyBuffer::new(vec![true; 8], KeyStage::Sifted);
        assert_eq!(k.leaked_bits(), 0);
        k.note_leak(3);
        k.note_leak(5);
        assert_eq!(k.leaked_bits(), 8);
    }

    #[test]
    fn remove_positions_returns_removed_in_order() {
        let mut k = KeyBuffer::new(
            vec![true, false, true, true, false, false, true],
            KeyStage::Sifted,
        );
        let removed = k.remove_positions(&[1, 3, 6]).unwrap();
        assert_eq!(removed, vec![false, true, true]);
        assert_eq!(k.bits(), &[true, true, false, false]);
        assert_eq!(k.len(), 4);
    }

    #[test]
    fn remove_positions_rejects_bad_inputs() {
        let mut k = KeyBuffer::new(vec![true; 4], KeyStage::Sifted);
        assert!(k.remove_positions(&[2, 1]).is_err());
        assert!(k.remove_positions(&[1, 1]).is_err());
        assert!(matches!(k.remove_positions(&[4]), Err(ProtocolError::SampleTooLarge)));
        assert_eq!(k.len(), 4);
    }

    #[test]
    fn hex_export_is_msb_first() {
        let k = KeyBuffer::new(vec![true, false, false, false, false, false, false, true, true], KeyStage::Final);
        assert_eq!(k.to_hex(), "8180");
        let empty = KeyBuffer::new(vec![], KeyStage::Final);
        assert_eq!(empty.to_hex(), "");
    }
}
