//! Hybrid-regressive translation: a transformer that decodes every k-th
//! target token autoregressively, then fills the gaps in one parallel pass.

pub mod bench;
pub mod cli;
pub mod data;
pub mod decoding;
pub mod error;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
