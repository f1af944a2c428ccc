//! Library surface of the `dronecov` harness binary: spec loading,
//! experiment orchestration, and plot-data extraction.

pub mod plot;
pub mod runner;
pub mod spec;
