//! Deterministic federated-learning robustness simulator.
//!
//! Trains a global classifier across simulated clients with FedAvg (or
//! bagging for tree ensembles), lets a marked subset of clients poison the
//! process during scheduled rounds, and optionally filters client updates
//! with an outlier detector before aggregation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod cli;
pub mod dataset;
pub mod defense;
pub mod error;
pub mod harness;
pub mod models;
pub mod rng;
pub mod threat;

pub use error::{Error, Result};
