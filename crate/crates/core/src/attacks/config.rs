use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{hex16, Severity};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Pgd,
    Cw,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::Fgsm, AttackKind::Pgd, AttackKind::Cw];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::Cw => "cw",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Ok(AttackKind::Fgsm),
            "pgd" => Ok(AttackKind::Pgd),
            "cw" | "c&w" | "carlini-wagner" => Ok(AttackKind::Cw),
            other => Err(Error::config(format!("unknown attack {other:?}"))),
        }
    }
}

/// Attack parameters. Budgets are in normalized [0,1] units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L∞ budget for FGSM and PGD.
    pub epsilon: f64,
    /// PGD step size.
    pub alpha: f64,
    /// PGD iterations.
    pub iterations: usize,
    /// Start PGD from a seeded uniform point in the ε-ball.
    pub random_start: bool,
    /// C&W confidence margin κ.
    pub kappa: f64,
    /// Initial C&W trade-off constant.
    pub c: f64,
    /// 1 keeps `c` fixed.
    pub binary_search_steps: usize,
    pub cw_iterations: usize,
    pub cw_learning_rate: f64,
    /// Stop a window's inner loop once its objective stalls.
    pub cw_abort_early: bool,
    pub target: Option<Severity>,
    pub clip_min: f64,
    pub clip_max: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::Fgsm,
            epsilon: 0.1,
            alpha: 0.01,
            iterations: 20,
            random_start: false,
            kappa: 0.0,
            c: 1.0,
            binary_search_steps: 5,
            cw_iterations: 1000,
            cw_learning_rate: 0.01,
            cw_abort_early: true,
            target: None,
            clip_min: 0.0,
            clip_max: 1.0,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn fgsm(epsilon: f64) -> Self {
        AttackConfig { kind: AttackKind::Fgsm, epsilon, ..Default::default() }
    }

    pub fn pgd(epsilon: f64, alpha: f64, iterations: usize) -> Self {
        AttackConfig { kind: AttackKind::Pgd, epsilon, alpha, iterations, ..Default::default() }
    }

    pub fn cw(c: f64, kappa: f64) -> Self {
        AttackConfig { kind: AttackKind::Cw, c, kappa, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::config("epsilon must be non-negative"));
        }
        if !(self.clip_min < self.clip_max) {
            return Err(Error::config("clip range is empty"));
        }
        match self.kind {
            AttackKind::Pgd if !(self.alpha > 0.0) => Err(Error::config("PGD step alpha must be positive")),
            AttackKind::Cw if self.cw_iterations == 0 => Err(Error::config("C&W needs at least one inner iteration")),
            AttackKind::Cw if self.binary_search_steps == 0 => Err(Error::config("C&W needs at least one search step")),
            AttackKind::Cw if !(self.c >= 0.0) || !(self.kappa >= 0.0) || !(self.cw_learning_rate > 0.0) => {
                Err(Error::config("C&W c and kappa must be non-negative, learning rate positive"))
            }
            _ => Ok(()),
        }
    }

    /// 16 hex chars identifying this configuration.
    pub fn hash(&self) -> String {
        hex16(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}
