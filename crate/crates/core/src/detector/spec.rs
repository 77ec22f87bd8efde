use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Rf,
    Gbt,
    Ffnn,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [DetectorKind::Rf, DetectorKind::Gbt, DetectorKind::Ffnn];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Rf => "rf",
            DetectorKind::Gbt => "gbt",
            DetectorKind::Ffnn => "ffnn",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rf" | "random_forest" => Ok(DetectorKind::Rf),
            "gbt" | "xgb" | "xgboost" => Ok(DetectorKind::Gbt),
            "ffnn" | "mlp" => Ok(DetectorKind::Ffnn),
            other => Err(Error::config(format!("unknown detector kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    /// Features tried per split; `None` means ⌈√d⌉.
    pub max_features: Option<usize>,
    pub min_samples_leaf: usize,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams { n_trees: 30, max_depth: Some(16), max_features: None, min_samples_leaf: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams { n_estimators: 40, learning_rate: 0.05, max_depth: 3, lambda: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FfnnParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for FfnnParams {
    fn default() -> Self {
        FfnnParams { hidden: vec![64, 64], learning_rate: 0.001, epochs: 100, batch_size: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    pub rf: RfParams,
    pub gbt: GbtParams,
    pub ffnn: FfnnParams,
    /// Decision threshold τ; a score equal to τ is normal.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            kind: DetectorKind::Gbt,
            rf: RfParams::default(),
            gbt: GbtParams::default(),
            ffnn: FfnnParams::default(),
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl DetectorSpec {
    pub fn of_kind(kind: DetectorKind) -> Self {
        DetectorSpec { kind, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(format!("threshold {} must lie in (0, 1)", self.threshold)));
        }
        match self.kind {
            DetectorKind::Rf => {
                let p = &self.rf;
                if p.n_trees == 0 || p.max_depth == Some(0) || p.max_features == Some(0) || p.min_samples_leaf == 0 {
                    return Err(Error::config("random forest sizes must be positive"));
                }
            }
            DetectorKind::Gbt => {
                let p = &self.gbt;
                if p.n_estimators == 0 || p.max_depth == 0 || !(p.learning_rate > 0.0) || !(p.lambda >= 0.0) {
                    return Err(Error::config(
                        "boosting needs at least one estimator, positive depth and learning rate",
                    ));
                }
            }
            DetectorKind::Ffnn => {
                let p = &self.ffnn;
                if p.hidden.contains(&0) || p.epochs == 0 || p.batch_size == 0 || !(p.learning_rate > 0.0) {
                    return Err(Error::config("network widths, epochs, batch size and learning rate must be positive"));
                }
            }
        }
        Ok(())
    }
}
