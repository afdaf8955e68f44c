//! Backbone-agnostic refinement of dense pixel-embedding maps by random-walk
//! diffusion on pixel manifolds, with anomaly scoring, boundary calibration,
//! pixel-level evaluation, and a seeded synthetic-scene generator for
//! desk-scale verification.

pub mod bench;
pub mod diffusion;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod partition;
pub mod pipeline;
pub mod scoring;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, Result};
