//! Desk-scale federated learning simulator for multi-label classification.
//!
//! The crate covers the full experimental pipeline:
//!
//! - [`data`]: label matrices, datasets, a planted-theme synthetic generator and
//!   the JSON-lines dataset format.
//! - [`kmodes`]: k-modes clustering over binary label vectors.
//! - [`partition`]: clustering-based client allocation, the random-split
//!   baseline and the label-distribution heterogeneity report.
//! - [`model`]: a small multi-label classifier trained with asymmetric loss and
//!   AdamW.
//! - [`federate`]: the round loop and the FedAvg / label-adaptive (FLAG)
//!   aggregators.
//! - [`metrics`]: average precision, mAP aggregates and rounds-to-target.

pub mod data;
pub mod error;
pub mod federate;
pub mod kmodes;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod seed;

pub use error::{Error, Result};
