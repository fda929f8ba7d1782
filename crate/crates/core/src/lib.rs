//! Desk-scale federated optimization engine.
//!
//! Implements local training with a contrastive planning loss against a
//! server-maintained task bank, simulated instruction labeling, unbiased
//! partial participation, and adaptive server aggregation, alongside
//! FedAvg/FedProx baselines, a centralized reference, and the diagnostics
//! used to study vision-language feature collapse at desk scale
//! (inter-task centroid distances, gradient dissimilarity, participation
//! inflation, bank path length).
//!
//! Entry points: [`federation::run_experiment`] for a single configured
//! run, [`presets::run_preset`] for the comparison grids, and the
//! `forgefl` binary for the command line.

pub mod aggregation;
pub mod bank;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod federation;
pub mod labeler;
pub mod losses;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod presets;
pub mod rng;

pub use config::{FederationConfig, Method};
pub use error::{Error, Result};
