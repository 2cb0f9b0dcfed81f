//! Linear contextual bandits with hypothesis transfer.
//!
//! The crate simulates LinUCB-style agents that reuse previously trained parameter
//! vectors ("source models") without access to the data those models were trained on.
//! A target ridge estimate is maintained online and blended with the sources through
//! a convex weight vector; the weights move according to either a hard rule (all mass
//! on the model with the smallest confidence bound) or a multiplicative softmax rule.
//! A biased-regularization variant penalizes distance to a source combination instead
//! of distance to zero, and an EXP4 baseline treats every model as an expert.
//!
//! Module map:
//! - [`linmodel`] — ridge design state (A, A⁻¹, b, θ̂) and matrix-norm primitives.
//! - [`transfer`] — source models, confidence bounds (γ), weight-update rules.
//! - [`policies`] — the four agents behind one select/observe contract.
//! - [`envs`] — synthetic linear environment and a MovieLens-backed one.
//! - [`diagnostics`] — closed-form bound evaluators and per-run inequality checks.
//! - [`harness`] — experiment configuration, seeded execution, CSV/SVG emission, CLI.

// Validation code uses `!(x > 0.0)` instead of `x <= 0.0` on purpose: the
// negated form also rejects NaN, which the direct comparison would accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod linmodel;
pub mod policies;
pub mod transfer;

pub use error::{Error, Result};
