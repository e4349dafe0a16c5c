//! Desk-scale controllable spontaneous conversational speech synthesis.
//!
//! The crate covers the full text-to-mel pipeline for two-party
//! conversations with explicit spontaneous-behavior control:
//!
//! - [`corpus`] — conversation data model, manifest/mel file formats and a
//!   deterministic synthetic corpus generator used as the test oracle.
//! - [`frontend`] — toy lexicon, phoneme-level linguistic frames carrying
//!   prolongation / filled-pause flags, and character embeddings.
//! - [`nn`] — a small tape-based reverse-mode autodiff engine (f64,
//!   single-threaded, bit-deterministic) that all models are built on.
//! - [`tagger`] — the 4-class spontaneous-behavior predictor, the
//!   frequency-controlled behavior selector and its evaluation metrics.
//! - [`acoustic`] — CBHG text/semantic encoders, speaker table and the
//!   GMM-attention auto-regressive mel decoder.
//! - [`context`] — speaker-independent acoustic context encoder: reference
//!   encoder, GRL speaker classifier, global style tokens, next predictor.
//! - [`training`] — loss composition, conversation-pair training steps,
//!   the pretrain/finetune schedule and checkpointing.

pub mod acoustic;
pub mod context;
pub mod corpus;
pub mod error;
pub mod frontend;
pub mod nn;
pub mod tagger;
pub mod training;
pub mod util;

pub use error::{Error, Result};

/// Scalar type used by all numeric code in this crate.
pub type Real = f64;
/// Dense matrix type used by all numeric code in this crate.
pub type Mat = ndarray::Array2<Real>;
