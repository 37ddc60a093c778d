//! Schema-driven prompting toolkit for generative dialogue state tracking.
//!
//! The pipeline runs schema → corpus → prompting → decoders → state →
//! evalkit; [`pipeline`] wires the stages into reproducible runs.

pub mod corpus;
pub mod error;
pub mod prompting;
pub mod schema;

pub use error::{Error, Result};
pub mod decoders;
pub mod evalkit;
pub mod pipeline;
pub mod state;
#[cfg(feature = "test-util")]
pub mod testing;
