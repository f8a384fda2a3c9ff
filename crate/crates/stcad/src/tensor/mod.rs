//! Minimal dense f64 tensor substrate with tape-based reverse-mode
//! differentiation.
//!
//! All tensors are two-dimensional (scalars are 1x1). A [`Tape`] owns the
//! forward values and gradient buffers of one computation; it is built fresh
//! for every training step and confined to one worker. Learnable weights
//! live outside the tape in a [`ParamStore`] and are bound onto a tape as
//! leaves per step.

pub mod gradcheck;
mod params;
mod tape;

pub use params::{AdamConfig, CheckpointError, ParamId, ParamStore, Parameter};
pub use tape::{Tape, TensorError, TensorId};
