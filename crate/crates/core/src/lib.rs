//! Weakly supervised human-object interaction detection: label extraction,
//! grounding-based proposal pruning, a two-stream multiple-instance model,
//! plausibility rescoring and AP evaluation.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fsio;
pub mod geometry;
pub mod gridfile;
pub mod grounding;
pub mod infer;
pub mod labels;
pub mod model;
pub mod pipeline;
pub mod plausibility;
pub mod synth;
pub mod vocab;

pub use error::{Error, Result};
