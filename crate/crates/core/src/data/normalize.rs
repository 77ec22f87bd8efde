use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::trace::SensorTrace;

/// Per-feature min-max statistics observed on a fitting split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub feature_names: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Constant features; they normalize to 0.0.
    pub degenerate: Vec<bool>,
}

impl NormalizationStats {
    /// Short stable identifier of these stats.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.feature_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for (lo, hi) in self.min.iter().zip(&self.max) {
            h.update(lo.to_le_bytes());
            h.update(hi.to_le_bytes());
        }
        hex16(&h.finalize())
    }

    fn check(&self, trace: &SensorTrace) -> Result<()> {
        if trace.feature_names != self.feature_names {
            return Err(Error::contract(format!(
                "trace features {:?} differ from normalization features {:?}",
                trace.feature_names, self.feature_names
            )));
        }
        Ok(())
    }

    fn scale(&self, i: usize, v: f32) -> f32 {
        if self.degenerate[i] {
            return 0.0;
        }
        let z = (v as f64 - self.min[i]) / (self.max[i] - self.min[i]);
        z.clamp(0.0, 1.0) as f32
    }
}

pub(crate) fn hex16(bytes: &[u8]) -> String {
    bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Fits min-max stats on `trace` and returns the normalized trace with them.
pub fn fit_normalize(trace: &SensorTrace) -> Result<(SensorTrace, NormalizationStats)> {
    if trace.is_empty() {
        return Err(Error::contract("cannot fit normalization on an empty trace"));
    }
    let n = trace.n_features();
    let mut min = vec![f64::INFINITY; n];
    let mut max = vec![f64::NEG_INFINITY; n];
    for row in trace.frames.chunks(n) {
        for (i, &v) in row.iter().enumerate() {
            min[i] = min[i].min(v as f64);
            max[i] = max[i].max(v as f64);
        }
    }
    let degenerate = min.iter().zip(&max).map(|(lo, hi)| hi <= lo).collect();
    let stats = NormalizationStats { feature_names: trace.feature_names.clone(), min, max, degenerate };
    let normalized = apply_normalize(trace, &stats)?;
    Ok((normalized, stats))
}

/// Maps `trace` through `stats`; values outside the fitted range are clipped to [0,1].
pub fn apply_normalize(trace: &SensorTrace, stats: &NormalizationStats) -> Result<SensorTrace> {
    if trace.is_empty() {
        return Err(Error::contract("cannot normalize an empty trace"));
    }
    stats.check(trace)?;
    if trace.normalized_with.is_some() {
        return Err(Error::contract(format!("trace {} is already normalized", trace.id)));
    }
    let n = trace.n_features();
    let mut out = trace.clone();
    for row in out.frames.chunks_mut(n) {
        for (i, v) in row.iter_mut().enumerate() {
            *v = stats.scale(i, *v);
        }
    }
    out.normalized_with = Some(stats.fingerprint());
    Ok(out)
}

/// Inverse affine map back to sensor units. Degenerate features come back
/// as their constant value.
pub fn denormalize(trace: &SensorTrace, stats: &NormalizationStats) -> Result<SensorTrace> {
    stats.check(trace)?;
    let n = trace.n_features();
    let mut out = trace.clone();
    for row in out.frames.chunks_mut(n) {
        for (i, v) in row.iter_mut().enumerate() {
            let span = if stats.degenerate[i] { 0.0 } else { stats.max[i] - stats.min[i] };
            *v = (stats.min[i] + *v as f64 * span) as f32;
        }
    }
    out.normalized_with = None;
    Ok(out)
}
