//! Multi-task text classification as binary pairwise classification.
//!
//! Every labeling task is cast as the question "does this label, as defined
//! for this dataset, apply to this text?". The model receives a query (a
//! dataset identifier concatenated with a natural-language label description)
//! and the text, and predicts a 2-way probability. One shared model head
//! serves any number of datasets and labeling schemes, which makes multi-task
//! training a matter of mixing example streams rather than adding heads.
//!
//! The crate is organized along the pipeline:
//!
//! * [`corpus`] — ingestion of heterogeneous source files into a unified
//!   record schema, text normalization, and label-distribution validation
//! * [`schema`] — the task registry (datasets, label types, class sets),
//!   label-description rendering, and record → pairwise-example conversion
//! * [`sampling`] — per-epoch random negative sampling and minority-class
//!   upsampling
//! * [`backend`] — the pair-encoder contract, a deterministic trainable toy
//!   encoder, and a subprocess adapter for external pretrained encoders
//! * [`trainer`] — the three-phase fine-tuning loop with early stopping and
//!   checkpoint selection
//! * [`inference`] — task-level prediction (argmax over per-class scores,
//!   binary thresholding) and threshold selection
//! * [`evaluation`] — macro-F1, confusion matrices, multi-seed aggregation,
//!   and report emission
//! * [`config`] — run and ablation-suite configuration files

pub mod backend;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod sampling;
pub mod schema;
pub mod trainer;

mod util;

pub use error::{Error, Result};
