//! The classical post-processing endpoints.
//!
//! A session turns correlated detector data into a shared secret key in
//! five steps: sifting (discard incompatible bases), error estimation
//! (sacrifice a sample to measure the QBER), reconciliation (interactive
//! parity repair until both keys agree), verification (compare short
//! digests) and privacy amplification (hash away what the public
//! discussion and the channel may have disclosed).
//!
//! The two endpoints are plain state machines over a
//! [`Channel`](crate::transport::Channel): [`run_alice`] answers,
//! [`run_bob`] drives. They can live on two threads of one process or on
//! two machines; [`run_full_session`] wires them back to back in memory
//! and returns the combined report. The quantum layer is co-simulated
//! from seeds exchanged in the opening handshake, which stand in for the
//! optical path; everything after the detector is the real protocol.
//!
//! Each step is also exposed as a standalone operation ([`sift`],
//! [`estimate_qber`], [`reconcile`](crate::protocol::reconcile),
//! [`verify_keys`], [`privacy_amplify`]) working on [`KeyBuffer`] values,
//! so the pieces can be tested and reused without a full session.

mod amplify;
mod cascade;
mod keybuf;
mod session;
mod wire;

pub use amplify::{amplified_len, privacy_amplify, toeplitz_hash};
pub use cascade::{reconcile, CascadeParams, ReconcileSummary};
pub use keybuf::{KeyBuffer, KeyStage};
pub use session::{
    alice_prepare, endpoint_seeds, estimate_qber, run_alice, run_bob, run_full_session, sift,
    verify_keys, EndpointOutcome, Role, SessionPolicy, SessionReport, SessionSetup,
};

use thiserror::Error;

use crate::analytic::AnalyticError;
use crate::sim::SimError;
use crate::transport::{MessageType, TransportError};

/// Where a session was abandoned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortStage {
    Setup,
    Sift,
    Estimate,
    Reconcile,
    Verify,
    Amplify,
}

impl AbortStage {
    pub fn code(self) -> u8 {
        match self {
            AbortStage::Setup => 0,
            AbortStage::Sift => 1,
            AbortStage::Estimate => 2,
            AbortStage::Reconcile => 3,
            AbortStage::Verify => 4,
            AbortStage::Amplify => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<AbortStage> {
        [
            AbortStage::Setup,
            AbortStage::Sift,
            AbortStage::Estimate,
            AbortStage::Reconcile,
            AbortStage::Verify,
            AbortStage::Amplify,
        ]
        .into_iter()
        .find(|s| s.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            AbortStage::Setup => "setup",
            AbortStage::Sift => "sift",
            AbortStage::Estimate => "estimate",
            AbortStage::Reconcile => "reconcile",
            AbortStage::Verify => "verify",
            AbortStage::Amplify => "amplify",
        }
    }
}

impl std::fmt::Display for AbortStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Errors from protocol operations and session runs.
///
/// Policy decisions (too many errors, failed verification) are not
/// errors: sessions report those as an aborted stage in their outcome.
/// This type covers what prevents a session from reaching any outcome at
/// all: transport failures, malformed frames, state divergence, misuse.
#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error("malformed {what} payload")]
    Wire { what: &'static str },
    #[error("unexpected {got} frame while waiting for {expected}")]
    Unexpected { got: MessageType, expected: MessageType },
    #[error("peer aborted during {stage}: {reason}")]
    PeerAbort { stage: AbortStage, reason: String },
    #[error("key stage cannot move from {from:?} to {to:?}")]
    StageRegression { from: KeyStage, to: KeyStage },
    #[error("operation needs a {expected:?} stage key, got {got:?}")]
    WrongStage { expected: KeyStage, got: KeyStage },
    #[error("endpoints disagree: {0}")]
    Misaligned(&'static str),
    #[error("sample exceeds the key")]
    SampleTooLarge,
    #[error("{name} out of range: {value}")]
    BadParameter { name: &'static str, value: f64 },
    #[error("reconciliation left a residual mismatch")]
    ResidualMismatch,
}
