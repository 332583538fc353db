//! Gaze-based deepfake detection for one-on-one video calls.
//!
//! Frames carry a point of gaze (or a gaze ray) plus six facial landmarks and
//! a speaking-context code. They are turned into per-landmark direction and
//! distance features, cut into overlapping windows, classified by a dual-input
//! CNN, and fused by voting across windows.

pub mod exec;
pub mod features;
pub mod fusion;
pub mod geometry;
pub mod ingest;
pub mod model;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod synth;
pub mod windowing;

pub use exec::Execution;
