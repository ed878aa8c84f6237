//! Learning-based dynamic risk indication for longitudinal driving scenes.
//!
//! The pipeline: a deterministic car-following simulator with actuator fault
//! injection ([`scenario`]), simulated noisy on-board sensors ([`sensor`]),
//! risk-feature extraction ([`features`]), a rule-based severity /
//! controllability / risk-stage oracle that labels ground truth ([`hara`]),
//! a from-scratch feedforward classifier trained on the noisy features
//! ([`model`]), evaluation and cross-validation ([`eval`]), and scenario-
//! sweep dataset tooling ([`dataset`]).

pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod hara;
pub mod model;
pub mod scenario;
pub mod sensor;

pub use error::{LadriError, Result};
