//! Self-ensemble filtering for distantly supervised relation extraction.
//!
//! A student classifier is trained with a cross-entropy plus consistency
//! loss while a teacher, kept as an exponential moving average of the
//! student weights, scores the entire initial training corpus after each
//! epoch. Samples the teacher disagrees with are dropped from the next
//! epoch and may come back later if the teacher changes its mind.
//!
//! The crate is organised as:
//!
//! - [`autodiff`]: a small reverse-mode tape over dense matrices.
//! - [`corpus`]: JSONL corpora, vocabulary, splitting and a synthetic
//!   noisy-corpus generator with ground-truth noise flags.
//! - [`students`]: the CNN, PCNN, entity-attention and Bi-GRU word-attention
//!   encoders.
//! - [`self_ensemble`]: losses, Adagrad, the EMA teacher and the training loop.
//! - [`noise_filter`]: the per-epoch clean/noisy decision.
//! - [`evaluation`]: precision/recall/F1 with a confidence threshold.
//! - [`cli`]: the `relex-sef` command line.

pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod noise_filter;
pub mod rng;
pub mod self_ensemble;
pub mod students;

pub use error::{Error, Result};
