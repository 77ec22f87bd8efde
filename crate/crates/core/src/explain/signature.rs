use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifiers::ClassifierModel;
use crate::data::{batch_tensor, hex16, TimeSeriesWindow};
use crate::error::{Error, Result};
use crate::numerics::{argmax, Tensor};

use super::background::BackgroundSet;

/// Which class columns of the last layer a signature spans.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignatureMode {
    /// All C classes, class-major: index `c·P + j`.
    #[default]
    AllClasses,
    /// Only the predicted class (length P).
    PredictedClass,
}

impl SignatureMode {
    fn as_str(self) -> &'static str {
        match self {
            SignatureMode::AllClasses => "all_classes",
            SignatureMode::PredictedClass => "predicted_class",
        }
    }
}

/// Penultimate-layer Shapley attributions of one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XaiSignature {
    /// Source window id.
    pub id: String,
    /// Identifies the model, background and mode that produced `values`.
    pub model_fingerprint: String,
    /// 0 benign, 1 adversarial; set by the caller.
    pub label: u8,
    pub values: Vec<f64>,
}

/// Fingerprint stamped on signatures from (`model`, `background`, `mode`).
pub fn signer_fingerprint(model: &ClassifierModel, background: &BackgroundSet, mode: SignatureMode) -> String {
    let mut h = Sha256::new();
    h.update(model.fingerprint().as_bytes());
    h.update(b"|");
    h.update(background.fingerprint().as_bytes());
    h.update(b"|");
    h.update(mode.as_str().as_bytes());
    hex16(&h.finalize())
}

/// Exact Shapley values of the penultimate units toward each logit of a
/// linear head `z = h·W + b` (`w`: `[P, C]`), against baseline `h̄`:
/// `φ[c·P + j] = W[j][c]·(h_j − h̄_j)`.
pub fn last_layer_shapley(w: &Tensor, h: &[f32], hbar: &[f64]) -> Result<Vec<f64>> {
    let s = w.shape();
    if s.len() != 2 || s[0] != h.len() || hbar.len() != h.len() {
        return Err(Error::Architecture(format!(
            "final layer of shape {s:?} is not a dense map from a width-{} penultimate layer",
            h.len()
        )));
    }
    let (p, c) = (s[0], s[1]);
    let mut phi = Vec::with_capacity(p * c);
    for class in 0..c {
        for j in 0..p {
            phi.push(w.data()[j * c + class] as f64 * (h[j] as f64 - hbar[j]));
        }
    }
    Ok(phi)
}

pub fn signature(
    model: &ClassifierModel,
    window: &TimeSeriesWindow,
    background: &BackgroundSet,
    mode: SignatureMode,
) -> Result<XaiSignature> {
    Ok(signatures(model, std::slice::from_ref(window), background, mode)?.remove(0))
}

/// Signatures (label 0) for each window, batched.
pub fn signatures(
    model: &ClassifierModel,
    windows: &[TimeSeriesWindow],
    background: &BackgroundSet,
    mode: SignatureMode,
) -> Result<Vec<XaiSignature>> {
    let hbar = background.mean_penultimate(model)?;
    let fp = signer_fingerprint(model, background, mode);
    let (w, _) = model.output_layer();
    let spec = model.spec();
    let (p, c) = (spec.penultimate_width(), spec.n_classes);
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(256) {
        for win in chunk {
            if win.timestep != spec.timestep || win.n_features != spec.n_features {
                return Err(Error::contract(format!("window {} does not match the model input shape", win.id())));
            }
        }
        let (logits, pen) = model.forward_batch(&batch_tensor(chunk)?)?;
        for ((win, h), z) in chunk.iter().zip(pen.data().chunks(p)).zip(logits.data().chunks(c)) {
            let mut values = last_layer_shapley(w, h, hbar)?;
            if mode == SignatureMode::PredictedClass {
                let k = argmax(z);
                values = values[k * p..(k + 1) * p].to_vec();
            }
            out.push(XaiSignature { id: win.id(), model_fingerprint: fp.clone(), label: 0, values });
        }
    }
    Ok(out)
}
