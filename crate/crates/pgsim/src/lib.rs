pub mod analysis;
pub mod config;
pub mod calibration;
pub mod channel;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod parametrization;
pub mod seed;

pub use error::{PgError, Result};

