//! Name-based ethnicity inference with two interchangeable engines.
//!
//! * [`bisg`]: Bayesian Improved Surname Geocoding over explicit surname and
//!   geography tables.
//! * [`llm`]: prompt construction, constrained-output parsing, response caching
//!   and bounded-concurrency batch classification against chat-completion
//!   backends.
//!
//! Both engines emit the same [`Prediction`] rows, so [`metrics`] and
//! [`distill`] never need to know which engine produced a label.

pub mod bisg;
pub mod distill;
pub mod llm;
pub mod metrics;
pub mod prediction;
pub mod records;
pub mod rng;

#[cfg(feature = "runtime")]
pub mod cli;
#[cfg(feature = "runtime")]
pub mod manifest;

pub use prediction::{Engine, PredictedLabel, Prediction, UNPARSEABLE};
pub use records::{CategoryScheme, NameRecord, RecordSet};
