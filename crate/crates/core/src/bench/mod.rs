//! Arena memory, footprint estimates, speed measurement and BLEU.

pub mod arena;
mod bleu;
pub mod memory;
mod wps;

pub use arena::{Arena, Phase};
pub use bleu::{bleu, sequence_accuracy, token_accuracy};
pub use memory::{estimate_max_bytes, MemoryEstimate};
pub use wps::{measure_wps, BenchReport, RunReport, WARMUP_SENTENCES};
