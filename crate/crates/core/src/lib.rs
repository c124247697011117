//! Coded Kalman filtering over MIMO Gaussian channels with feedback:
//! encoder design, stability theory, Monte Carlo simulation, LQG control
//! and a numerical probe of the partition structure of optimal encoders.

pub mod coded_kf;
pub mod conjecture;
pub mod control;
pub mod error;
pub mod linalg;
pub mod models;
pub mod simulation;
pub mod stability;

pub use error::{Error, Result};
