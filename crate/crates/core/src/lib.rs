//! Pair-centric human-object interaction detection and anticipation.
//!
//! The crate is split along the pipeline:
//!
//! - [`numerics`]: dense row-major matrices, softmax, attention.
//! - [`model`]: the unified pair-slot decoder forward pass on injected visual memory.
//! - [`matching`]: box geometry and one-to-one slot assignment.
//! - [`losses`]: focal verb loss, detection/anticipation losses, orthogonality
//!   regularizers with analytic gradients, warm-up ramp and final objective.
//! - [`benchmark`]: keyframe gap analysis, continuity correction, clip building,
//!   future pair alignment and HOI-A export.
//! - [`eval`]: triplet mAP (Full/Rare/Non-rare) and person-wise Recall@k.
//! - [`synth`]: seeded generators for streams and evaluation cases.
//! - [`cli`]: the `detant` command-line front end.

pub mod benchmark;
pub mod cli;
pub mod error;
pub mod eval;
pub mod losses;
pub mod matching;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod selfcheck;
pub mod synth;

pub use error::{Error, Result};
