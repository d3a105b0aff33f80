//! Desk-scale aerial vision-and-dialog navigation.
//!
//! A continuous top-down world with rotated square view areas, a synthetic
//! dialog/trajectory corpus, two dialog-conditioned waypoint policies (a
//! multimodal transformer and an LSTM, each with a human-attention head),
//! arithmetic-mean fusion of their per-step outputs, closed-loop rollouts and
//! the SPL / SR / GP evaluation metrics.

pub mod agents;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod simulator;

pub use error::{Error, Result};
