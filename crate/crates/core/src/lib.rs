//! Separate-and-trace toolkit.
//!
//! Builds several functionally equivalent copies of a classifier, each
//! blended with its own noise-sensitive tracer network; attacks a copy with
//! hard-label black-box attacks; and traces an adversarial example back to the
//! copy that produced it from the tracers' logits.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod datax;
pub mod exec;
pub mod harness;
pub mod netcore;
pub mod separation;
pub mod tracing;

pub use exec::Exec;
