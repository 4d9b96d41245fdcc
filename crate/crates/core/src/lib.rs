//! Deterministic simulation of a cooperative LEO-satellite and cell-free
//! massive MIMO uplink: channel statistics, MMSE estimation, ergodic
//! throughput and uplink power control.

pub mod bessel;
pub mod channel;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod power_control;
pub mod throughput;

pub use error::{Error, Result};
