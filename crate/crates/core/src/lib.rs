//! Coolant-leak forecasting and detection for liquid-cooled GPU racks.
//!
//! The crate is organised as a pipeline:
//!
//! ```text
//! simgen -> stream (pub/sub) -> tstore
//!                            -> featlab -> forecaster (LSTM) --+
//!                            -> detector (random forest) ------+-> alerting
//! ```
//!
//! `analytics` reproduces the exploration statistics and evaluation metrics,
//! and `pipeline` wires the stages together for live serving and replay.

pub mod alerting;
pub mod analytics;
pub mod detector;
pub mod featlab;
pub mod forecaster;
pub mod model;
pub mod pipeline;
pub mod simgen;
pub mod stream;
pub mod tstore;

pub use model::*;
