//! Heterogeneous-radar place recognition.
//!
//! The pipeline synchronizes sparse 4D-radar scans and dense spinning-radar
//! sweeps into a shared RCS polar BEV representation, extracts features with a
//! shared convolutional stack, aggregates them into compact rotation-robust
//! descriptors via entropy-regularized optimal transport, and evaluates
//! retrieval with FOV-aware mining and adaptive-margin metric-learning losses.
//!
//! Stage order for a 4D query: [`preprocess`] (ego-velocity, dynamic/clutter
//! removal, polar projection, temporal aggregation) → [`backbone`] →
//! [`descriptor`]. For a spinning database scan: [`sync`] (rescale, multi-view
//! generation, RCS correction) → [`backbone`] → [`descriptor`]. Training-side
//! utilities live in [`mining`]; retrieval metrics in [`eval`]; a
//! self-contained synthetic scene generator in [`synth`].

pub mod backbone;
pub mod config;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod mining;
pub mod pipeline;
pub mod preprocess;
pub mod scan;
pub mod sync;
pub mod synth;
pub mod weights;

pub use error::{Error, ErrorKind, Result};
