//! Surrogate-based explanations for black-box time series forecasts, scored
//! by spectral forecastability.

pub mod blackbox;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod features;
pub mod forecastability;
pub mod pipeline;
pub mod surrogate;
pub mod synthetic;
pub mod treeshap;

pub use error::{Error, Result};
