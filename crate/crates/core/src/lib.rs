//! Oscillometric blood-pressure estimation from a 2D morpho-temporal
//! representation of cuff pulses, regressed by a hybrid convolutional and
//! recurrent network.

pub mod autodiff;
pub mod bp_model;
pub mod config;
pub mod error;
pub mod eval_reporting;
pub mod io;
pub mod morpho_grid;
pub mod pipeline;
pub mod signal_prep;
pub mod stats;
pub mod synth_oscillometry;
pub mod trainer;

pub use error::{Error, Result};
