//! Spreading a local process improvement across the whole process.
//!
//! A user describes a change made to one stage (or part) of a process. The
//! pipeline extracts that local change, abstracts it away from its origin,
//! decides whether it still needs expanding, and adapts it to the remaining
//! segments through a pluggable LLM [`gateway`]. The [`eval`] harness
//! compares that guided route against a single direct prompt and [`stats`]
//! analyses the paired outcomes.

pub mod eval;
pub mod fixtures;
pub mod gateway;
pub mod model;
pub mod prompts;
pub mod scatter;
pub mod stats;
pub mod text;
