//! File formats, stage drivers and the synthetic end-to-end check.

pub mod formats;
pub mod pipeline;
pub mod records;
pub mod synth_check;

pub use meldfair_core as core;
