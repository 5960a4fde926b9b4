//! Federated optimisation laboratory: FedAvg, FedProx, FedADMM, FedDyn and the
//! Laplace-site family (FedLap, FedLap-Cov, FedLap-Func) over small
//! from-scratch models.

pub mod data;
pub mod error;
pub mod harness;
pub mod local;
pub mod model;
pub mod strategy;

pub use error::{Error, Result};
