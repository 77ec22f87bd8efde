//! Deterministic synthetic sensor traces.
//!
//! Segments cycle through none → low → medium → high. Within a segment of
//! class `c`, feature `i` follows the AR(1) process
//! `x_t = μ[c][i] + ρ·(x_{t-1} − μ[c][i]) + σ·η_t` with seeded standard
//! normal noise `η`. One optional feature additionally carries a sinusoid
//! whose frequency depends on the class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

use super::trace::{SensorTrace, Severity};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_features: usize,
    pub frames_per_segment: usize,
    /// Number of none→low→medium→high cycles.
    pub cycles: usize,
    pub sample_rate: f64,
    /// `class_means[class][feature]`.
    pub class_means: Vec<Vec<f64>>,
    pub ar_coeff: f64,
    pub noise: f64,
    pub oscillating_feature: Option<usize>,
    pub oscillation_amplitude: f64,
    /// Oscillation frequency in Hz per class.
    pub oscillation_hz: [f64; 4],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_features: 6,
            frames_per_segment: 100,
            cycles: 8,
            sample_rate: 10.0,
            class_means: vec![
                vec![0.0, 3.0, 0.0, 1.0, 0.0, 1.0],
                vec![1.0, 2.0, 2.0, 0.0, 0.0, 1.0],
                vec![2.0, 1.0, 1.0, 3.0, 0.0, 1.0],
                vec![3.0, 0.0, 3.0, 2.0, 0.0, 1.0],
            ],
            ar_coeff: 0.6,
            noise: 0.35,
            oscillating_feature: Some(5),
            oscillation_amplitude: 0.5,
            oscillation_hz: [0.5, 1.0, 1.5, 2.0],
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.frames_per_segment == 0 || self.cycles == 0 {
            return Err(Error::config("synthetic trace needs features, frames per segment and cycles"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::config("sample rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.ar_coeff) {
            return Err(Error::config(format!("AR coefficient {} outside [0,1)", self.ar_coeff)));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::config("noise scale must be non-negative"));
        }
        if self.class_means.len() != 4 || self.class_means.iter().any(|m| m.len() != self.n_features) {
            return Err(Error::config(format!("class_means must be 4 × {}", self.n_features)));
        }
        if let Some(f) = self.oscillating_feature {
            if f >= self.n_features {
                return Err(Error::config(format!("oscillating feature {f} out of range")));
            }
        }
        for a in 0..4 {
            for b in a + 1..4 {
                let differing = (0..self.n_features)
                    .filter(|&i| (self.class_means[a][i] - self.class_means[b][i]).abs() > 1e-12)
                    .count();
                if differing < 2 {
                    return Err(Error::config(format!(
                        "degenerate class means: {} and {} differ on {differing} feature(s), need at least 2",
                        Severity::ALL[a],
                        Severity::ALL[b]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generates the trace described by `config`, with the given trace id.
pub fn synth_generate(config: &SynthConfig, id: &str) -> Result<SensorTrace> {
    config.validate()?;
    let n = config.n_features;
    let total = config.frames_per_segment * config.cycles * 4;
    let mut rng = SeededRng::new(config.seed);
    let mut state: Vec<f64> = config.class_means[0].clone();
    let mut frames = Vec::with_capacity(total * n);
    let mut labels = Vec::with_capacity(total);
    let mut timestamps = Vec::with_capacity(total);
    for t in 0..total {
        let class = (t / config.frames_per_segment) % 4;
        let means = &config.class_means[class];
        let time = t as f64 / config.sample_rate;
        for i in 0..n {
            let mu = means[i];
            state[i] = mu + config.ar_coeff * (state[i] - mu) + config.noise * rng.normal();
            let mut v = state[i];
            if config.oscillating_feature == Some(i) {
                let phase = 2.0 * std::f64::consts::PI * config.oscillation_hz[class] * time;
                v += config.oscillation_amplitude * phase.sin();
            }
            frames.push(v as f32);
        }
        labels.push(Severity::ALL[class]);
        timestamps.push(time);
    }
    Ok(SensorTrace {
        id: id.to_string(),
        sample_rate: config.sample_rate,
        feature_names: (0..n).map(|i| format!("f{i}")).collect(),
        frames,
        labels,
        timestamps,
        normalized_with: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_free_segments_are_constant() {
        let cfg = SynthConfig {
            ar_coeff: 0.0,
            noise: 0.0,
            oscillating_feature: None,
            cycles: 1,
            frames_per_segment: 5,
            ..SynthConfig::default()
        };
        let t = synth_generate(&cfg, "s").unwrap();
        assert_eq!(t.len(), 20);
        for f in 0..t.len() {
            let class = t.labels[f].index();
            let want: Vec<f32> = cfg.class_means[class].iter().map(|&v| v as f32).collect();
            assert_eq!(t.frame(f), want.as_slice());
        }
        t.validate().unwrap();
    }

    #[test]
    fn identical_seeds_identical_traces() {
        let cfg = SynthConfig::default();
        let a = synth_generate(&cfg, "a").unwrap();
        let b = synth_generate(&cfg, "a").unwrap();
        assert_eq!(a.frames.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.frames.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let c = synth_generate(&SynthConfig { seed: 8, ..cfg }, "a").unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn degenerate_means_are_refused() {
        let mut cfg = SynthConfig::default();
        cfg.class_means[2] = cfg.class_means[1].clone();
        cfg.class_means[2][0] = 7.0; // differs on one feature only
        assert!(matches!(synth_generate(&cfg, "x"), Err(Error::Config(ref m)) if m.contains("degenerate")));
        let bad_rho = SynthConfig { ar_coeff: 1.0, ..SynthConfig::default() };
        assert!(bad_rho.validate().is_err());
    }

    /// Best single-feature interval classifier over segment means, found by
    /// exhaustive search over three cut points and majority labelling.
    fn best_stump_accuracy(points: &[(f64, usize)]) -> f64 {
        let mut sorted = points.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = sorted.len();
        let mut best = 0;
        for a in 0..=n {
            for b in a..=n {
                for c in b..=n {
                    let mut correct = 0;
                    for (lo, hi) in [(0, a), (a, b), (b, c), (c, n)] {
                        let mut counts = [0usize; 4];
                        for p in &sorted[lo..hi] {
                            counts[p.1] += 1;
                        }
                        correct += counts.iter().max().unwrap();
                    }
                    best = best.max(correct);
                }
            }
        }
        best as f64 / n as f64
    }

    #[test]
    fn default_segments_are_stump_separable() {
        let cfg = SynthConfig::default();
        let t = synth_generate(&cfg, "s").unwrap();
        let segs = t.len() / cfg.frames_per_segment;
        let mut best = 0.0f64;
        for f in 0..cfg.n_features {
            let points: Vec<(f64, usize)> = (0..segs)
                .map(|s| {
                    let frames = s * cfg.frames_per_segment..(s + 1) * cfg.frames_per_segment;
                    let mean = frames.clone().map(|i| t.frame(i)[f] as f64).sum::<f64>() / frames.len() as f64;
                    (mean, t.labels[s * cfg.frames_per_segment].index())
                })
                .collect();
            best = best.max(best_stump_accuracy(&points));
        }
        assert!(best >= 0.95, "best single-feature accuracy {best}");
    }

    #[test]
    fn class_conditional_means_match_configuration() {
        let cfg = SynthConfig {
            ar_coeff: 0.0,
            oscillating_feature: None,
            frames_per_segment: 500,
            cycles: 20,
            ..SynthConfig::default()
        };
        let t = synth_generate(&cfg, "m").unwrap();
        for c in 0..4 {
            let idx: Vec<usize> = (0..t.len()).filter(|&f| t.labels[f].index() == c).collect();
            assert!(idx.len() >= 10_000);
            let bound = 3.0 * cfg.noise / (idx.len() as f64).sqrt();
            for i in 0..cfg.n_features {
                let mean = idx.iter().map(|&f| t.frame(f)[i] as f64).sum::<f64>() / idx.len() as f64;
                assert!((mean - cfg.class_means[c][i]).abs() <= bound, "class {c} feature {i}: {mean}");
            }
        }
    }
}
