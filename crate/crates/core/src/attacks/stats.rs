use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationStats {
    pub linf: f64,
    pub l2: f64,
    /// Pearson correlation of the flattened windows.
    pub pcc: f64,
}

/// Pearson correlation of two equal-length vectors.
pub fn pearson(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::contract(format!("cannot correlate vectors of length {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("PCC of a constant vector".into()));
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

pub fn perturbation_stats(original: &[f32], adversarial: &[f32]) -> Result<PerturbationStats> {
    if original.len() != adversarial.len() {
        return Err(Error::contract("original and adversarial windows differ in size"));
    }
    let mut linf = 0.0f64;
    let mut l2 = 0.0f64;
    for (&a, &b) in original.iter().zip(adversarial) {
        let d = (b as f64 - a as f64).abs();
        linf = linf.max(d);
        l2 += d * d;
    }
    Ok(PerturbationStats { linf, l2: l2.sqrt(), pcc: pearson(original, adversarial)? })
}
