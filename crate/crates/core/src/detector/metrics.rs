use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::SignatureDataset;

use super::model::{verdict_for, AttackDetectorModel};

/// Binary detection metrics; class 0 is normal, 1 attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub accuracy: f64,
    pub f1_normal: f64,
    pub f1_attack: f64,
    pub precision_attack: f64,
    pub recall_attack: f64,
    /// `confusion[truth][flagged]`.
    pub confusion: [[usize; 2]; 2],
    pub total: usize,
}

fn f1(tp: usize, fp: usize, fneg: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

impl DetectionMetrics {
    pub fn from_flags(truth: &[u8], flagged: &[bool]) -> Result<Self> {
        if truth.is_empty() || truth.len() != flagged.len() {
            return Err(Error::contract("detection metrics need equal-length, nonempty inputs"));
        }
        let mut confusion = [[0usize; 2]; 2];
        for (&t, &f) in truth.iter().zip(flagged) {
            if t > 1 {
                return Err(Error::contract(format!("label {t} is not 0 or 1")));
            }
            confusion[t as usize][f as usize] += 1;
        }
        let [[tn, fp], [fneg, tp]] = confusion;
        let (precision_attack, recall_attack, f1_attack) = f1(tp, fp, fneg);
        let (_, _, f1_normal) = f1(tn, fneg, fp);
        Ok(DetectionMetrics {
            accuracy: (tp + tn) as f64 / truth.len() as f64,
            f1_normal,
            f1_attack,
            precision_attack,
            recall_attack,
            confusion,
            total: truth.len(),
        })
    }

    pub fn from_scores(truth: &[u8], scores: &[f64], tau: f64) -> Result<Self> {
        let flags: Vec<bool> = scores.iter().map(|&s| verdict_for(s, tau)).collect();
        Self::from_flags(truth, &flags)
    }
}

pub fn evaluate_detector(model: &AttackDetectorModel, data: &SignatureDataset) -> Result<DetectionMetrics> {
    if data.is_empty() {
        return Err(Error::contract("cannot evaluate a detector on an empty set"));
    }
    if !data.y.contains(&0) || !data.y.contains(&1) {
        return Err(Error::contract("evaluation set must hold both labels"));
    }
    let rows: Vec<&[f64]> = data.x.iter().map(Vec::as_slice).collect();
    DetectionMetrics::from_scores(&data.y, &model.scores(&rows)?, model.threshold())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub accuracy: f64,
}

/// Accuracy at every threshold where it can change: τ = 0 and each distinct
/// score, ascending. Computed from sorted scores without re-scoring.
pub fn threshold_sweep(scores: &[f64], truth: &[u8]) -> Result<Vec<SweepPoint>> {
    if scores.is_empty() || scores.len() != truth.len() {
        return Err(Error::contract("threshold sweep needs equal-length, nonempty inputs"));
    }
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(truth.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len() as f64;
    let positives = pairs.iter().filter(|p| p.1 == 1).count();
    // at τ: correct = normals with score ≤ τ + attacks with score > τ
    let (mut normals_below, mut attacks_below) = (0usize, 0usize);
    let mut out = Vec::new();
    let mut i = 0;
    if pairs[0].0 > 0.0 {
        out.push(SweepPoint { threshold: 0.0, accuracy: positives as f64 / n });
    }
    while i < pairs.len() {
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 == 1 {
                attacks_below += 1;
            } else {
                normals_below += 1;
            }
            i += 1;
        }
        out.push(SweepPoint { threshold: s, accuracy: (normals_below + positives - attacks_below) as f64 / n });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_constant_detectors() {
        let truth = [0, 0, 1, 1];
        let m = DetectionMetrics::from_flags(&truth, &[false, false, true, true]).unwrap();
        assert_eq!((m.accuracy, m.f1_normal, m.f1_attack), (1.0, 1.0, 1.0));
        let m = DetectionMetrics::from_flags(&truth, &[false; 4]).unwrap();
        assert_eq!((m.accuracy, m.f1_attack), (0.5, 0.0));
        assert!((m.f1_normal - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.confusion, [[2, 0], [2, 0]]);
        assert!(DetectionMetrics::from_flags(&[], &[]).is_err());
    }

    #[test]
    fn sweep_matches_brute_force() {
        let scores = [0.1, 0.5, 0.5, 0.9, 0.3, 0.7, 0.0];
        let truth = [0, 1, 0, 1, 0, 1, 0];
        let sweep = threshold_sweep(&scores, &truth).unwrap();
        assert_eq!(sweep.first().unwrap().threshold, 0.0);
        for p in &sweep {
            let brute = DetectionMetrics::from_scores(&truth, &scores, p.threshold).unwrap().accuracy;
            assert!((p.accuracy - brute).abs() < 1e-12, "τ={}", p.threshold);
        }
        let best = sweep.iter().map(|p| p.accuracy).fold(0.0, f64::max);
        assert!((best - 6.0 / 7.0).abs() < 1e-12);
    }
}
