//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod alloc_audit;
pub mod equivalence;
pub mod exhaustive;
pub mod fixtures;
pub mod gradcheck;
pub mod memory_audit;
