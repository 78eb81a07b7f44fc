//! Deep-ensemble uncertainty quantification for automatic modulation
//! classification.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! * [`siggen`] synthesizes labeled baseband IQ frames through an AWGN
//!   (optionally Rayleigh) channel.
//! * [`dataset`] holds frames, performs stratified train/test splits and
//!   reads/writes the `.sigset` container.
//! * [`nncore`] is a small convolutional classifier with hand-written
//!   forward/backward passes, plain SGD and a FLOP estimator.
//! * [`ensemble`] trains and aggregates independently seeded members and
//!   provides the standalone and entropy-weighted baselines.
//! * [`uqmetrics`] scores predictions: NLL, Brier, ECE, KL, CI widths,
//!   strict/relaxed coverage and the high-confidence proportion.
//! * [`adversarial`] crafts FGSM perturbations at a controlled
//!   perturbation-to-noise ratio and scores systems under attack.
//! * [`experiment`] wires all of it behind a config file and the CLI stages.

pub mod adversarial;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod nncore;
pub mod seed;
pub mod siggen;
pub mod uqmetrics;

mod container;

pub use error::{Error, Result};
