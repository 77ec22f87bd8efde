//! Attack-and-defend toolkit for sensor-window cybersickness severity classifiers.
//!
//! The crate trains recurrent severity classifiers on multivariate sensor
//! windows, crafts FGSM / PGD / Carlini-Wagner adversarial windows against
//! them, turns penultimate-layer Shapley attributions into "XAI signatures",
//! fits binary attack detectors on those signatures and replays sensor traces
//! through a closed classify → sign → detect → gate → mitigate loop.
//!
//! Everything computes on the in-crate [`numerics`] substrate: a small dense
//! tensor type, a reverse-mode tape and Adam.

pub mod attacks;
pub mod classifiers;
pub mod cli;
pub mod data;
pub mod detector;
pub mod error;
pub mod explain;
pub mod numerics;
pub mod pipeline;

mod container;

pub use error::{Error, LoadError, Result};

/// Tool version embedded in every artifact this crate writes.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
