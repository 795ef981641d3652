//! Host-side pipeline for the H2-diesel controller: artifacts, CSV output,
//! run configuration, the UDP policy server and the command implementations
//! behind the `h2df` binary.

pub mod artifact;
pub mod records;
pub mod config;
pub mod serve;
pub mod parallel;
pub mod commands;
