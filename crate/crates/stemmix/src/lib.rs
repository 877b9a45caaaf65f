//! Stem-based music mashup engine.
//!
//! The pipeline: analyze separated stem tracks (vocal / harmonic /
//! percussion) into a [`mashupdb::MashupDB`], generate labeled mashup
//! candidates by recombining stems under key- and tempo-matching rules
//! ([`generation`]), train a compatibility model on the self-synthesized
//! dataset ([`model`]), and rank candidates against a rule-based baseline
//! ([`amu`], [`evaluate`]).
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod amu;
pub mod analysis;
pub mod error;
pub mod evaluate;
pub mod generation;
pub mod mashupdb;
pub mod model;
pub mod signal;
pub mod synth;
pub mod transform;

pub use error::{Error, Result};
