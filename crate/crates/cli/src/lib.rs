//! Command-line front end for the macro-XRF restoration pipeline:
//! phantom generation, scan simulation, Poisson dictionary-learning
//! restoration, the MCR-ALS baseline, evaluation, and dwell-time
//! sweeps producing method-comparison curve data.

pub mod cli;
pub mod commands;
pub mod manifest;
pub mod pgm;
pub mod settings;

pub use cli::run;
