//! Shapley attributions: exact last-layer "XAI signatures", sampled or
//! enumerated input-feature attributions, global rankings and the labeled
//! signature repository detectors are trained from.

mod background;
mod repository;
mod shapley;
mod signature;

pub use background::{sample_background, BackgroundSet, DEFAULT_BACKGROUND_SIZE};
pub use repository::{SignatureDataset, SignatureRecord, SignatureRepository, SplitTag, REPOSITORY_SCHEMA_VERSION};
pub use shapley::{
    global_importance, masked_window, shap_input, shap_input_sampled, AttributionVector, FeatureImportance,
    ShapleyMode, ShapleyOptions, EXACT_MAX_FEATURES,
};
pub use signature::{last_layer_shapley, signature, signatures, signer_fingerprint, SignatureMode, XaiSignature};
