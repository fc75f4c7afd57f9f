//! Temporal Pointwise Convolution (TPC) networks for hourly remaining
//! length-of-stay and mortality prediction on ICU time series.

pub mod autodiff;
pub mod ehr;
pub mod model;
pub mod objectives;
pub mod trainer;
pub mod analysis;
pub mod error;

pub use error::{Error, Result};
