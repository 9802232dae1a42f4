//! Ensemble adversarial training against hypothesis-only bias in natural
//! language inference.
//!
//! A shared sentence encoder feeds a premise+hypothesis task classifier and
//! an ensemble of hypothesis-only adversaries that read the hypothesis
//! representation through a gradient-reversal node. After training, the
//! encoder is frozen and fresh probes measure how much hypothesis-only bias
//! can be relearnt from it.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod probe;
pub mod rng;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
