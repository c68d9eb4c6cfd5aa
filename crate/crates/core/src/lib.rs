//! Black-box boundary value analysis.
//!
//! A program's sensitivity at an input is measured by the ratio of output
//! distance to input distance over nearby input pairs (the program
//! difference quotient). With the normalized compression distance on both
//! sides this works for any input and output type, including thrown errors.
//! Grid scans turn the quotient into heatmaps and a (1+1) evolution strategy
//! searches for tight input pairs straddling behavioural boundaries.

pub mod cli;
pub mod derivative;
pub mod distance;
pub mod explore;
pub mod report;
pub mod sut;
pub mod values;

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 20190;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
