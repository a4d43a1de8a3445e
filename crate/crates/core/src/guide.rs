//! The book chapters as doc-tested modules.
//!
//! mdbook cannot run code blocks against crate dependencies, so each chapter
//! of `book/src` is included here verbatim; `cargo test --doc` compiles and
//! runs every snippet, keeping the guide in sync with the API.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/atomic-measures.md")]
pub mod atomic_measures {}

#[doc = include_str!("../../../book/src/payoffs.md")]
pub mod payoffs {}

#[doc = include_str!("../../../book/src/concave-envelope.md")]
pub mod concave_envelope {}

#[doc = include_str!("../../../book/src/strategies.md")]
pub mod strategies {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/call-spread.md")]
pub mod call_spread {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
