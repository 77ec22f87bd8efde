use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackConfig;
use crate::error::{Error, Result};

/// Attack window `[start, start + duration)` in seconds from the first frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InjectionSchedule {
    pub start_s: f64,
    pub duration_s: f64,
    pub attack: AttackConfig,
}

impl Default for InjectionSchedule {
    fn default() -> Self {
        InjectionSchedule { start_s: 60.0, duration_s: 120.0, attack: AttackConfig::pgd(0.1, 0.01, 20) }
    }
}

impl InjectionSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.start_s >= 0.0) || !(self.duration_s >= 0.0) || !(self.start_s + self.duration_s).is_finite() {
            return Err(Error::config("schedule start and duration must be finite and non-negative"));
        }
        self.attack.validate()
    }

    /// Frames `[round(start·rate), round((start+duration)·rate))`, clipped to
    /// `n_frames`. The flag reports whether clipping happened.
    pub fn frames(&self, sample_rate: f64, n_frames: usize) -> (Range<usize>, bool) {
        let a = (self.start_s * sample_rate).round() as usize;
        let b = ((self.start_s + self.duration_s) * sample_rate).round() as usize;
        let truncated = b > n_frames;
        (a.min(n_frames)..b.min(n_frames), truncated)
    }
}
