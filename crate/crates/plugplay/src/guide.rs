//! The book, compiled.
//!
//! Each module below carries one chapter of the mdbook under `book/` as
//! its documentation, so every code snippet in the book builds and runs
//! as a doc test of this crate. If a chapter drifts from the API,
//! `cargo test --doc` fails; the book cannot silently rot.
//!
//! Read it rendered (`mdbook serve book`) or straight from here.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}

#[doc = include_str!("../../../book/src/budget.md")]
pub mod budget {}

#[doc = include_str!("../../../book/src/timing.md")]
pub mod timing {}

#[doc = include_str!("../../../book/src/montecarlo.md")]
pub mod montecarlo {}

#[doc = include_str!("../../../book/src/protocol.md")]
pub mod protocol {}

#[doc = include_str!("../../../book/src/alignment.md")]
pub mod alignment {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/reproduction.md")]
pub mod reproduction {}
