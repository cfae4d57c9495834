pub mod config;
pub mod covariance;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod io;
mod linalg;
pub mod neural;
pub mod observations;
mod par;
pub mod pipeline;
pub mod qg;
pub mod units;
pub mod var4d;

pub use error::{Error, Result};
