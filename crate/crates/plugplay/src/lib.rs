//! Desk-scale simulator and protocol stack for an auto-compensating
//! go-and-return BB84 key distribution link.
//!
//! The crate covers the whole path from light pulses on a fiber to a shared
//! secret key, plus the timing alignment a field deployment needs:
//!
//! * [`analytic`]: closed-form link budget, rate and QBER model, and the
//!   cost of distilling a secret key out of a noisy raw key.
//! * [`sim`]: slot-by-slot Monte Carlo of pulse trains, gated detectors,
//!   dark counts, Rayleigh backscatter and an optional intercept-resend
//!   attacker, with per-event truth tags for attribution.
//! * [`protocol`]: the classical post-processing endpoints (sifting, error
//!   estimation, interactive parity reconciliation, verification and
//!   privacy amplification) speaking over a framed message channel.
//! * [`transport`]: that framed channel, with in-memory and TCP backends
//!   and an auditing wrapper that counts disclosed key material.
//! * [`alignment`]: the two-stage reflectometry scan that locates the far
//!   mirror before a session can run.
//! * [`config`]: the flat `key = value` experiment description shared by
//!   the command line front end and the test suite.
//!
//! Everything that consumes randomness is seeded explicitly and is
//! reproducible bit for bit for a given seed.
//!
//! # Example
//!
//! ```
//! use plugplay::analytic;
//!
//! // A 22.8 km link with 10.5 dB of fiber loss and 6.6 dB inside Bob.
//! let eta_t = analytic::transfer_efficiency(10.5 / 22.8, 22.8, 6.6).unwrap();
//! assert!((eta_t - 0.0195).abs() < 1e-4);
//!
//! // Distilling a secret key from a 486 Hz raw key at 5.4% QBER.
//! let useful = analytic::useful_rate(486.0, 0.054).unwrap();
//! assert!((useful - 207.6).abs() < 0.5);
//! ```

pub mod alignment;
pub mod analytic;
pub mod config;
pub mod guide;
pub mod protocol;
pub mod qubit;
pub mod sim;
pub mod transport;

mod bits;
