//! Closed-loop hypoglycemia detection and rescue dosing.
//!
//! The crate wires five subsystems into one desk-scale system:
//!
//! - [`ledger`]: an append-only, SHA-256 hash-chained block store with
//!   binary Merkle transaction trees and miner-approval gating.
//! - [`identity`]: registration, authentication, policy-based
//!   authorization, and keyed-hash approval signatures.
//! - [`fog`]: preprocessing of raw device readings into clean vitals
//!   samples (numeric coercion, mean imputation, heart-rate conversion).
//! - [`detector`]: a from-scratch random forest (plus decision-tree and
//!   KNN baselines) with k-fold cross-validation and ROC metrics.
//! - [`dosing`]: the two-dose rescue protocol state machine against a
//!   simulated medicine pump.
//!
//! [`datagen`] produces a synthetic labeled dataset calibrated to fixed
//! reference statistics, [`devices`] simulates sensors and glucose
//! kinetics on a virtual clock, and [`gateway`] binds everything behind
//! an HTTP service.

pub mod datagen;
pub mod detector;
pub mod devices;
pub mod dosing;
pub mod fog;
pub mod gateway;
pub mod identity;
pub mod ledger;
