//! Postural muscle-synergy analysis and cable-robot balance simulation.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balance;
pub mod binning;
pub mod dsp;
pub mod error;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod plots;
pub mod resample;
pub mod seed;
pub mod selftest;
pub mod sim;
pub mod stats;
pub mod synergy;
