//! Symbols carried by the quantum path.
//!
//! A pulse encodes one bit in one of two conjugate bases. The simulator
//! moves these symbols through channels and detectors; the protocol layer
//! only ever learns bases and measured bits, never the symbol an attacker
//! saw in flight.

use rand::Rng;

/// Measurement basis for one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    /// The rectilinear choice.
    B0,
    /// The diagonal choice.
    B1,
}

impl Basis {
    /// Uniform random basis.
    pub fn random<R: Rng>(rng: &mut R) -> Basis {
        if rng.gen::<bool>() {
            Basis::B1
        } else {
            Basis::B0
        }
    }

    /// Wire code, `0` or `1`.
    pub fn code(self) -> u8 {
        match self {
            Basis::B0 => 0,
            Basis::B1 => 1,
        }
    }

    /// Inverse of [`Basis::code`].
    pub fn from_code(code: u8) -> Option<Basis> {
        match code {
            0 => Some(Basis::B0),
            1 => Some(Basis::B1),
            _ => None,
        }
    }
}

/// One prepared pulse: a basis choice and the bit encoded in it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantumSymbol {
    pub basis: Basis,
    pub bit: bool,
}

impl QuantumSymbol {
    /// Uniform random symbol, the sender's per-slot choice.
    pub fn random<R: Rng>(rng: &mut R) -> QuantumSymbol {
        QuantumSymbol {
            basis: Basis::random(rng),
            bit: rng.gen::<bool>(),
        }
    }

    /// All four symbols, handy for exhaustive checks.
    pub const ALL: [QuantumSymbol; 4] = [
        QuantumSymbol { basis: Basis::B0, bit: false },
        QuantumSymbol { basis: Basis::B0, bit: true },
        QuantumSymbol { basis: Basis::B1, bit: false },
        QuantumSymbol { basis: Basis::B1, bit: true },
    ];
}
