//! Capacity model, configuration optimizer and Monte-Carlo simulator for a
//! single-gateway LoRaWAN cell with confirmed and unconfirmed traffic.

pub mod analytic;
pub mod error;
pub mod metrics;
pub mod optimize;
pub mod scenario;
pub mod simulate;

pub use error::{Error, Result};
