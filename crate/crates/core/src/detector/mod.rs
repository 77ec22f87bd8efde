//! Binary attack detectors over XAI signatures: random forest,
//! gradient-boosted trees and a small feed-forward network.

mod ffnn;
mod metrics;
mod model;
mod spec;
mod tree;

pub use metrics::{evaluate_detector, threshold_sweep, DetectionMetrics, SweepPoint};
pub use model::{train_detector, verdict_for, AttackDetectorModel, DetectionVerdict};
pub use spec::{DetectorKind, DetectorSpec, FfnnParams, GbtParams, RfParams};
pub use tree::{Tree, TreeNode};
