//! Sequence-level confidence calibration for sequence recognizers.
//!
//! The crate bundles everything needed to train and evaluate a calibrated
//! sequence recognizer on a controllable synthetic task:
//!
//! - [`task`]: domain types, the synthetic task generator and corruptions.
//! - [`ctc`]: exact CTC posteriors, loss/gradient, greedy and top-N search.
//! - [`semlm`]: a bidirectional-context count language model used for
//!   semantic candidate mining and perplexity.
//! - [`losses`]: the similar-sequence regularizer with its hardness-adaptive
//!   weight, plus token-level baselines.
//! - [`model`]: a tiny recurrent recognizer with CTC and autoregressive heads,
//!   training, and offline similar-sequence mining.
//! - [`metrics`]: ECE/ACE/MCE, reliability diagrams and diagnostics.
//! - [`experiment`]: end-to-end experiment drivers used by the CLI.

pub mod ctc;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod semlm;
pub mod task;

pub use error::{Error, Result};
