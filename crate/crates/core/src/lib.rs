pub mod audio;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod gmm;
pub mod interventions;
pub mod protocol;
pub mod regression;
pub mod synth;

pub use error::{Error, Result};
