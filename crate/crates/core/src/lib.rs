pub mod calibration;
pub mod datagen;
pub mod detection;
pub mod error;
pub mod indicators;
pub mod io;
pub mod laws;
pub mod matrix;
pub mod plot;
pub mod run;
pub mod sensitivity;
mod rng;

pub use error::{Error, Result};
