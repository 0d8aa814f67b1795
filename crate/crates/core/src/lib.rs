//! Gradient-dropout fine-tuning schedules on a small transformer encoder.
//!
//! The crate is organised around one idea: after backpropagation and before
//! the parameter update, a binary mask decides which gradient entries flow.
//! Varying how that mask is drawn — per batch, per epoch, per layer, with an
//! annealed rate, or as whole-layer freezing schedules — gives the family of
//! policies in [`mask::PolicyKind`].
//!
//! Modules, roughly bottom-up:
//!
//! - [`tensor`] — dense `f64` tensors with tape-based reverse-mode autodiff.
//! - [`model`] — a from-scratch multi-head encoder classifier and its
//!   parameter set, partitioned into layers for masking.
//! - [`mask`] — mask policies, their schedules, and mask application.
//! - [`optim`] — SGD with the mask hook between backprop and the update.
//! - [`tasks`] — deterministic synthetic corpora and classification tasks.
//! - [`stats`] — the paired t-test used to compare policies.
//! - [`harness`] — experiment runner, metrics files, and timeline export.

pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod mask;
pub mod model;
pub mod optim;
pub mod rng;
pub mod selfcheck;
pub mod stats;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
