//! Batch experiment runner: configures families and loops, runs ε/α sweeps,
//! fits convergence slopes, and emits machine-readable tables.

pub mod config;
pub mod experiments;
pub mod slope;
