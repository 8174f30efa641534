//! Simulation and analysis of pulsed heterodyne thermometry of a GHz
//! mechanical mode.

pub mod cli;
pub mod config;
pub mod dsp;
pub mod error;
pub mod infer;
pub mod io;
pub mod lsq;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
