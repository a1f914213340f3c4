//! Unified proposal retrieval and moment grounding for long videos.
//!
//! A long video is sliced into fixed-length overlapping proposal windows. A
//! cross-modal encoder conditions each window on the text query, samples the
//! relevant frames, and distills every window into a retrieval context token.
//! The top-scoring windows go through an anchor-query decoder that regresses
//! (center, width) moments. Retrieval and grounding train jointly from
//! moment supervision: a frame-level sampling hinge, an in-batch contrastive
//! objective over query-proposal pairs, and a Hungarian-matched grounding
//! loss.
//!
//! The crate ships a synthetic-data harness, a trainer with deterministic
//! checkpoints, recall metrics, and a CLI (`synth`/`train`/`eval`/`predict`/
//! `sweep`/`plot`).

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod retrieval;
pub mod temporal;
pub mod trainer;

pub use error::RgError;
