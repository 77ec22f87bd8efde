use std::collections::HashMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attacks::craft_batch;
use crate::classifiers::{label_of, ClassifierModel};
use crate::data::{window_ending_at, SensorTrace, Severity, TimeSeriesWindow};
use crate::detector::AttackDetectorModel;
use crate::error::{Error, Result};
use crate::explain::{signature, signer_fingerprint, BackgroundSet, SignatureMode, XaiSignature};

use super::mitigation::{mitigation_for, MitigationAction, Verdict};
use super::report::RunSummary;
use super::schedule::InjectionSchedule;

/// Detector plus what it needs to sign windows.
#[derive(Clone, Copy, Debug)]
pub struct Defense<'a> {
    pub detector: &'a AttackDetectorModel,
    pub background: &'a BackgroundSet,
    pub mode: SignatureMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamOptions {
    /// Decide every k-th frame once the first window is full.
    pub decision_interval: usize,
    /// Craft all scheduled adversarial windows before replay instead of at
    /// their frame. Both paths give identical events.
    pub precompute_attacks: bool,
    /// Keep the signatures of alerted windows for online repository updates.
    pub record_detections: bool,
}

impl Default for StreamOptions {
    fn default() -> Self {
        StreamOptions { decision_interval: 1, precompute_attacks: true, record_detections: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Baseline,
    Attacked,
    Defended,
    /// Detector on, no attacker.
    Monitored,
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Baseline => "baseline",
            RunMode::Attacked => "attacked",
            RunMode::Defended => "defended",
            RunMode::Monitored => "monitored",
        })
    }
}

/// One decision of the loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineEvent {
    pub frame: usize,
    /// Seconds since the first frame of the trace.
    pub time_s: f64,
    pub true_label: Severity,
    pub predicted: Severity,
    pub probabilities: Vec<f64>,
    pub attack_active: bool,
    pub verdict: Verdict,
    /// Detector score, when a detector ran.
    pub score: Option<f64>,
    pub action: MitigationAction,
    pub alert: bool,
    /// Wall-clock seconds for classify, sign and detect. Not serialized, so
    /// event logs stay reproducible.
    #[serde(skip)]
    pub latency_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: RunMode,
    pub trace_id: String,
    pub sample_rate: f64,
    pub decision_interval: usize,
    /// Scheduled attack frames after clipping, `[start, end)`.
    pub attack_frames: Option<(usize, usize)>,
    pub config_hash: Option<String>,
    pub seed: u64,
    pub events: Vec<PipelineEvent>,
    pub summary: RunSummary,
    pub warnings: Vec<String>,
    /// Signatures of alerted windows when detections are recorded.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detections: Vec<XaiSignature>,
}

fn check_inputs(trace: &SensorTrace, model: &ClassifierModel, defense: Option<&Defense>) -> Result<()> {
    trace.validate()?;
    let spec = model.spec();
    if trace.n_features() != spec.n_features {
        return Err(Error::contract(format!(
            "trace has {} features, model expects {}",
            trace.n_features(),
            spec.n_features
        )));
    }
    if let Some(fp) = &model.normalization {
        if trace.normalized_with.as_deref() != Some(fp.as_str()) {
            return Err(Error::contract(format!(
                "trace normalized with {:?}, model trained on stats {fp}",
                trace.normalized_with
            )));
        }
    }
    if trace.len() < spec.timestep {
        return Err(Error::InsufficientData { needed: spec.timestep, available: trace.len() });
    }
    if let Some(d) = defense {
        let expected = signer_fingerprint(model, d.background, d.mode);
        if d.detector.signature_fingerprint() != Some(expected.as_str()) {
            return Err(Error::contract(format!(
                "detector was trained on signatures {:?}, this model and background sign as {expected}",
                d.detector.signature_fingerprint()
            )));
        }
    }
    Ok(())
}

/// Replays `trace` frame by frame through classify → sign → detect → gate.
///
/// Decisions start at the first frame with a full window. Frames inside the
/// schedule see an adversarial window crafted against `model`; labels stay
/// the clean ones.
pub fn run_stream(
    trace: &SensorTrace,
    model: &ClassifierModel,
    defense: Option<&Defense>,
    schedule: Option<&InjectionSchedule>,
    opts: &StreamOptions,
) -> Result<RunReport> {
    if opts.decision_interval == 0 {
        return Err(Error::config("decision interval must be positive"));
    }
    if let Some(s) = schedule {
        s.validate()?;
    }
    check_inputs(trace, model, defense)?;
    let t = model.spec().timestep;
    let decisions: Vec<usize> = (t - 1..trace.len()).step_by(opts.decision_interval).collect();
    let mut warnings = Vec::new();
    let attack_range = schedule.map(|s| {
        let (range, truncated) = s.frames(trace.sample_rate, trace.len());
        if truncated {
            warnings.push(format!(
                "attack schedule ends after the trace; truncated to frames {}..{}",
                range.start, range.end
            ));
        }
        if range.start < t - 1 {
            warnings.push(format!("attack starts at frame {} before the first full window", range.start));
        }
        range
    });
    let active = |f: usize| attack_range.as_ref().is_some_and(|r| r.contains(&f));

    let mut crafted: HashMap<usize, TimeSeriesWindow> = HashMap::new();
    if let (Some(s), true) = (schedule, opts.precompute_attacks) {
        let clean: Vec<TimeSeriesWindow> = decisions
            .iter()
            .filter(|&&f| active(f))
            .map(|&f| window_ending_at(trace, t, f))
            .collect::<Result<_>>()?;
        if !clean.is_empty() {
            for a in craft_batch(model, &clean, &s.attack)? {
                crafted.insert(a.window.end_frame, a.window);
            }
        }
    }

    let t0 = trace.timestamps[0];
    let mut events = Vec::with_capacity(decisions.len());
    let mut detections = Vec::new();
    let mut previous = MitigationAction::NoMitigation;
    for &f in &decisions {
        let attack_active = active(f);
        let input = match (attack_active, schedule) {
            (true, Some(s)) => match crafted.remove(&f) {
                Some(w) => w,
                None => craft_batch(model, &[window_ending_at(trace, t, f)?], &s.attack)?.remove(0).window,
            },
            _ => window_ending_at(trace, t, f)?,
        };
        let start = Instant::now();
        let probabilities = model.predict(&input)?;
        let predicted = label_of(&probabilities);
        let (verdict, score, sig) = match defense {
            Some(d) => {
                let sig = signature(model, &input, d.background, d.mode)?;
                let v = d.detector.detect(&sig)?;
                (if v.attack { Verdict::Attack } else { Verdict::Normal }, Some(v.score), Some(sig))
            }
            None => (Verdict::DetectorDisabled, None, None),
        };
        let latency_s = start.elapsed().as_secs_f64();
        let (action, alert) = mitigation_for(predicted, verdict, previous);
        if alert && opts.record_detections {
            if let Some(mut s) = sig {
                s.label = 1;
                detections.push(s);
            }
        }
        previous = action;
        events.push(PipelineEvent {
            frame: f,
            time_s: trace.timestamps[f] - t0,
            true_label: trace.labels[f],
            predicted,
            probabilities,
            attack_active,
            verdict,
            score,
            action,
            alert,
            latency_s,
        });
    }
    let mode = match (schedule.is_some(), defense.is_some()) {
        (false, false) => RunMode::Baseline,
        (true, false) => RunMode::Attacked,
        (true, true) => RunMode::Defended,
        (false, true) => RunMode::Monitored,
    };
    let summary = RunSummary::from_events(&events, opts.decision_interval as f64 / trace.sample_rate);
    Ok(RunReport {
        mode,
        trace_id: trace.id.clone(),
        sample_rate: trace.sample_rate,
        decision_interval: opts.decision_interval,
        attack_frames: attack_range.map(|r| (r.start, r.end)),
        config_hash: None,
        seed: schedule.map_or(0, |s| s.attack.seed),
        events,
        summary,
        warnings,
        detections,
    })
}
