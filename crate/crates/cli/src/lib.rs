//! Configuration-driven experiments on top of the `meanfield` crate.

pub mod config;
pub mod report;
pub mod run;
pub mod selftest;
