//! Temporal entailment pretraining (TEP) over synthetic clinical timelines.
//!
//! The pipeline runs end to end on a single machine:
//!
//! 1. [`ontology`] declares staged conditions, organ systems and lab bands.
//! 2. [`cohort`] generates deterministic synthetic patient timelines.
//! 3. [`supervision`] cuts timelines into windows, weakly labels window pairs
//!    as entail / contradict / neutral and samples gap-bounded pairs.
//! 4. [`textizer`] renders windows to text and encodes `[CLS] a [SEP] b`.
//! 5. [`model`] is a pre-norm transformer encoder with rotary positions.
//! 6. [`objective`] holds the smoothed classification loss, the order
//!    embedding violation loss, analytic backprop, AdamW and the trainer.
//! 7. [`evaluation`] computes classification metrics, gap-stratified ECE,
//!    order-geometry probes and runs ablations.
//! 8. [`cli`] wires it all behind the `tep` binary, configured by one
//!    [`config::PipelineConfig`] file.

pub mod cli;
pub mod cohort;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod objective;
pub mod ontology;
pub mod seed;
pub mod supervision;
pub mod textizer;

pub use error::{Error, Result};
