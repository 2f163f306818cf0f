//! Dual-contrast network for Raven-style progressive matrices.
//!
//! * [`tensor`]: float64 tensors, reverse-mode tape, layers, Adam, gradient checking.
//! * [`rpm`]: procedural puzzle generator with a rule-inference solver.
//! * [`dataset`]: binary dataset files, external import and subsampling.
//! * [`model`]: the network (rule contrast, choice contrast, scoring head).
//! * [`train`]: training loop, evaluation, ablation and few-shot protocols.
//! * [`gradsuite`]: finite-difference checks of every layer and the full loss.

pub mod tensor;
pub mod rpm;
pub mod dataset;
pub mod model;
pub mod train;
pub mod gradsuite;
