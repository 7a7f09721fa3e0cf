//! regionlab is a small, self-contained instance-segmentation laboratory.
//!
//! It trains tiny two-stage detectors on synthetic shape scenes and measures
//! how RoI feature extraction and mask-loss choices affect mask quality. The
//! interesting operators are implemented three ways — quantization-free
//! bilinear extraction (`align`), the classic quantizing max-pool (`pool`),
//! and quantize-then-resample (`warp`) — so their behavior can be compared
//! under identical training conditions.
//!
//! Everything runs on the CPU in `f64` with deterministic seeding: a given
//! (config, seed) pair reproduces checkpoints, logs, and reports byte for
//! byte. All gradients are checked against central finite differences.

pub mod boxes;
pub mod config;
pub mod error;
pub mod eval;
pub mod harness;
pub mod hash;
pub mod heads;
pub mod mask;
pub mod pipeline;
pub mod postproc;
pub mod rng;
pub mod roi;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
