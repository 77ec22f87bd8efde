use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container;
use crate::data::hex16;
use crate::error::{Error, LoadError, Result};
use crate::explain::{SignatureDataset, XaiSignature};
use crate::numerics::{derive_seed, SeededRng, Tensor};

use super::ffnn::{Network, NetworkMeta};
use super::spec::{DetectorKind, DetectorSpec};
use super::tree::{grow, Criterion, GrowParams, Tree};

const MAGIC: &[u8; 8] = b"CSDETECT";
const VERSION: u32 = 1;

/// Attack flag for `score` at threshold `tau`; a tie is normal.
pub fn verdict_for(score: f64, tau: f64) -> bool {
    score > tau
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub attack: bool,
    /// Estimated probability of the adversarial label.
    pub score: f64,
    pub id: String,
}

#[derive(Clone, Debug, PartialEq)]
enum Fitted {
    /// Leaf values are class-1 fractions; each tree votes `value > 0.5`.
    Forest(Vec<Tree>),
    /// Score = sigmoid(base + learning_rate · Σ leaf values).
    Boosted { base: f64, trees: Vec<Tree> },
    Network(Network),
}

/// A fitted detector. Scores are probabilities of the adversarial label.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackDetectorModel {
    spec: DetectorSpec,
    dim: usize,
    training_fingerprint: String,
    signature_fingerprint: Option<String>,
    fitted: Fitted,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn training_fingerprint(spec: &DetectorSpec, x: &[Vec<f64>], y: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec).expect("spec serializes"));
    for (row, label) in x.iter().zip(y) {
        h.update([*label]);
        for v in row {
            h.update(v.to_le_bytes());
        }
    }
    hex16(&h.finalize())
}

/// Fits a detector on a labeled signature matrix.
pub fn train_detector(data: &SignatureDataset, spec: &DetectorSpec) -> Result<AttackDetectorModel> {
    spec.validate()?;
    let (x, y) = (&data.x, &data.y);
    if x.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    let dim = x[0].len();
    if dim == 0 || x.iter().any(|r| r.len() != dim) || y.len() != x.len() {
        return Err(Error::contract("training rows must share a positive dimensionality and have one label each"));
    }
    if y.iter().any(|&l| l > 1) {
        return Err(Error::contract("labels must be 0 or 1"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { location: "detector training set".into(), detail: "non-finite value".into() });
    }
    let positives = y.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::Degenerate(format!("training set holds only label {}", y[0])));
    }
    let fitted = match spec.kind {
        DetectorKind::Rf => {
            let p = &spec.rf;
            let stats: Vec<(f64, f64)> = y.iter().map(|&l| (l as f64, 1.0)).collect();
            let grow_params = GrowParams {
                criterion: Criterion::Gini,
                max_depth: p.max_depth,
                max_features: p.max_features.unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize),
                min_samples_leaf: p.min_samples_leaf,
            };
            let trees = (0..p.n_trees)
                .map(|t| {
                    let mut rng = SeededRng::new(derive_seed(spec.seed, t as u64));
                    let rows = (0..x.len()).map(|_| rng.below(x.len())).collect();
                    grow(x, &stats, rows, &grow_params, &mut rng)
                })
                .collect();
            Fitted::Forest(trees)
        }
        DetectorKind::Gbt => {
            let p = &spec.gbt;
            let rate = positives as f64 / y.len() as f64;
            let base = (rate / (1.0 - rate)).ln();
            let grow_params = GrowParams {
                criterion: Criterion::Newton { lambda: p.lambda },
                max_depth: Some(p.max_depth),
                max_features: dim,
                min_samples_leaf: 1,
            };
            let mut f = vec![base; x.len()];
            let mut trees = Vec::with_capacity(p.n_estimators);
            let mut rng = SeededRng::new(spec.seed);
            for _ in 0..p.n_estimators {
                let stats: Vec<(f64, f64)> = f
                    .iter()
                    .zip(y)
                    .map(|(&fi, &l)| {
                        let q = sigmoid(fi);
                        (q - l as f64, (q * (1.0 - q)).max(1e-12))
                    })
                    .collect();
                let tree = grow(x, &stats, (0..x.len()).collect(), &grow_params, &mut rng);
                for (fi, row) in f.iter_mut().zip(x) {
                    *fi += p.learning_rate * tree.leaf_value(row);
                }
                trees.push(tree);
            }
            Fitted::Boosted { base, trees }
        }
        DetectorKind::Ffnn => Fitted::Network(Network::train(x, y, &spec.ffnn, spec.seed)?),
    };
    Ok(AttackDetectorModel {
        spec: spec.clone(),
        dim,
        training_fingerprint: training_fingerprint(spec, x, y),
        signature_fingerprint: data.model_fingerprint.clone(),
        fitted,
    })
}

impl AttackDetectorModel {
    pub fn spec(&self) -> &DetectorSpec {
        &self.spec
    }

    pub fn kind(&self) -> DetectorKind {
        self.spec.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn threshold(&self) -> f64 {
        self.spec.threshold
    }

    /// Copy with a different decision threshold.
    pub fn with_threshold(&self, tau: f64) -> Result<Self> {
        let mut m = self.clone();
        m.spec.threshold = tau;
        m.spec.validate()?;
        Ok(m)
    }

    pub fn training_fingerprint(&self) -> &str {
        &self.training_fingerprint
    }

    /// Fingerprint of the signatures this detector was trained on.
    pub fn signature_fingerprint(&self) -> Option<&str> {
        self.signature_fingerprint.as_deref()
    }

    /// Forest trees, or boosted trees; empty for a network.
    pub fn trees(&self) -> &[Tree] {
        match &self.fitted {
            Fitted::Forest(t) | Fitted::Boosted { trees: t, .. } => t,
            Fitted::Network(_) => &[],
        }
    }

    fn check_dim(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::contract(format!("signature has {} values, detector expects {}", row.len(), self.dim)));
        }
        Ok(())
    }

    /// Forest score using only the first `k` trees.
    #[cfg(test)]
    pub(crate) fn forest_score_prefix(&self, row: &[f64], k: usize) -> Option<f64> {
        match &self.fitted {
            Fitted::Forest(trees) => {
                let k = k.min(trees.len());
                let votes = trees[..k].iter().filter(|t| t.leaf_value(row) > 0.5).count();
                Some(votes as f64 / k as f64)
            }
            _ => None,
        }
    }

    pub fn scores(&self, rows: &[&[f64]]) -> Result<Vec<f64>> {
        for r in rows {
            self.check_dim(r)?;
        }
        match &self.fitted {
            Fitted::Forest(trees) => Ok(rows
                .iter()
                .map(|r| trees.iter().filter(|t| t.leaf_value(r) > 0.5).count() as f64 / trees.len() as f64)
                .collect()),
            Fitted::Boosted { base, trees } => Ok(rows
                .iter()
                .map(|r| sigmoid(base + self.spec.gbt.learning_rate * trees.iter().map(|t| t.leaf_value(r)).sum::<f64>()))
                .collect()),
            Fitted::Network(net) => {
                let mut out = Vec::with_capacity(rows.len());
                for chunk in rows.chunks(1024) {
                    out.extend(net.scores(chunk)?);
                }
                Ok(out)
            }
        }
    }

    pub fn score(&self, row: &[f64]) -> Result<f64> {
        Ok(self.scores(&[row])?[0])
    }

    pub fn detect(&self, sig: &XaiSignature) -> Result<DetectionVerdict> {
        let score = self.score(&sig.values)?;
        Ok(DetectionVerdict { attack: verdict_for(score, self.spec.threshold), score, id: sig.id.clone() })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (forest, boosted, network, values) = match &self.fitted {
            Fitted::Forest(t) => (Some(t.clone()), None, None, Vec::new()),
            Fitted::Boosted { base, trees } => (None, Some((*base, trees.clone())), None, Vec::new()),
            Fitted::Network(n) => {
                let values = n.params.iter().flat_map(|p| p.data().iter().copied()).collect();
                (None, None, Some(n.meta.clone()), values)
            }
        };
        let desc = Descriptor {
            kind: "detector".into(),
            spec: self.spec.clone(),
            dim: self.dim,
            training_fingerprint: self.training_fingerprint.clone(),
            signature_fingerprint: self.signature_fingerprint.clone(),
            forest,
            boosted,
            network,
        };
        Ok(container::encode(MAGIC, VERSION, &serde_json::to_vec(&desc)?, &values))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (desc, values) = container::decode(MAGIC, VERSION, bytes)?;
        let d: Descriptor = serde_json::from_slice(desc).map_err(|e| LoadError::Descriptor(e.to_string()))?;
        let bad = |msg: &str| Error::from(LoadError::Descriptor(msg.into()));
        if d.kind != "detector" {
            return Err(bad("not a detector"));
        }
        d.spec.validate().map_err(|e| bad(&e.to_string()))?;
        let fitted = match (d.spec.kind, d.forest, d.boosted, d.network) {
            (DetectorKind::Rf, Some(trees), None, None) if !trees.is_empty() => Fitted::Forest(trees),
            (DetectorKind::Gbt, None, Some((base, trees)), None) if !trees.is_empty() => Fitted::Boosted { base, trees },
            (DetectorKind::Ffnn, None, None, Some(meta)) => {
                if meta.mean.len() != d.dim || meta.scale.len() != d.dim {
                    return Err(bad("standardization length disagrees with the dimensionality"));
                }
                let mut params = Vec::with_capacity(meta.shapes.len());
                let mut offset = 0;
                for shape in &meta.shapes {
                    let n: usize = shape.iter().product();
                    let block = values
                        .get(offset..offset + n)
                        .ok_or_else(|| LoadError::Truncated("parameter block past end of payload".into()))?;
                    params.push(Tensor::new(shape.clone(), block.to_vec())?);
                    offset += n;
                }
                if offset != values.len() || meta.shapes.first().map(|s| s[0]) != Some(d.dim) {
                    return Err(bad("network parameters disagree with the descriptor"));
                }
                Fitted::Network(Network { meta, params })
            }
            _ => return Err(bad("fitted parameters do not match the detector kind")),
        };
        let model = AttackDetectorModel {
            spec: d.spec,
            dim: d.dim,
            training_fingerprint: d.training_fingerprint,
            signature_fingerprint: d.signature_fingerprint,
            fitted,
        };
        if !model.trees().iter().all(|t| t.is_valid(model.dim)) {
            return Err(bad("malformed tree"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct Descriptor {
    kind: String,
    spec: DetectorSpec,
    dim: usize,
    training_fingerprint: String,
    signature_fingerprint: Option<String>,
    forest: Option<Vec<Tree>>,
    boosted: Option<(f64, Vec<Tree>)>,
    network: Option<NetworkMeta>,
}
