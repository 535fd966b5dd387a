//! Phonological class recognition for sign-language keypoint sequences.
//!
//! The crate covers the whole pipeline: lexicon and keypoint ingestion
//! ([`dataset`], [`keypoint`]), fixed-shape preprocessing and stratified
//! splitting ([`preprocess`]), a small deterministic numerical core with
//! analytic gradients ([`engine`]), the classifier families
//! ([`classifiers`]), metrics and repeated-seed aggregation
//! ([`evaluation`]), a synthetic kinematic data generator ([`synth`]) and
//! the config-driven experiment commands ([`experiment`]).

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifiers;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod keypoint;
pub mod preprocess;
pub mod synth;

pub use error::{Error, Result};
