use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TOOL_VERSION;

use super::mitigation::Verdict;
use super::stream::{PipelineEvent, RunMode, RunReport};

/// Aggregates of one run; a pure function of its events.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub decisions: usize,
    /// Predicted == true label.
    pub accuracy: f64,
    pub attack_frames: usize,
    pub attack_frames_alerted: usize,
    /// `None` without attack frames.
    pub attack_alert_fraction: Option<f64>,
    pub alerts: usize,
    pub false_alerts: usize,
    /// Seconds spent in each action, in [`crate::pipeline::MitigationAction::ALL`] order.
    pub dwell_s: [f64; 4],
    pub latency_mean_s: f64,
    pub latency_p95_s: f64,
}

impl RunSummary {
    /// `period_s` is the time between decisions.
    pub fn from_events(events: &[PipelineEvent], period_s: f64) -> Self {
        if events.is_empty() {
            return RunSummary::default();
        }
        let n = events.len();
        let attack_frames = events.iter().filter(|e| e.attack_active).count();
        let attack_frames_alerted = events.iter().filter(|e| e.attack_active && e.alert).count();
        let mut dwell_s = [0.0; 4];
        for e in events {
            dwell_s[e.action.index()] += period_s;
        }
        let mut lat: Vec<f64> = events.iter().map(|e| e.latency_s).collect();
        lat.sort_by(f64::total_cmp);
        let p95 = lat[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        RunSummary {
            decisions: n,
            accuracy: events.iter().filter(|e| e.predicted == e.true_label).count() as f64 / n as f64,
            attack_frames,
            attack_frames_alerted,
            attack_alert_fraction: (attack_frames > 0).then(|| attack_frames_alerted as f64 / attack_frames as f64),
            alerts: events.iter().filter(|e| e.alert).count(),
            false_alerts: events.iter().filter(|e| e.alert && !e.attack_active).count(),
            dwell_s,
            latency_mean_s: lat.iter().sum::<f64>() / n as f64,
            latency_p95_s: p95,
        }
    }
}

/// Agreement of one run with a baseline over the same decision frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub mode: String,
    pub decisions: usize,
    pub accuracy: f64,
    pub action_agreement: f64,
    pub prediction_agreement: f64,
    pub alerts: usize,
    pub attack_frames: usize,
    pub attack_frames_alerted: usize,
}

/// One row for the baseline itself, then one per other run.
pub fn compare_runs(baseline: &RunReport, others: &[&RunReport]) -> Result<Vec<ComparisonRow>> {
    let frames: Vec<usize> = baseline.events.iter().map(|e| e.frame).collect();
    let mut rows = Vec::with_capacity(others.len() + 1);
    for run in std::iter::once(baseline).chain(others.iter().copied()) {
        if run.events.len() != frames.len() || run.events.iter().zip(&frames).any(|(e, &f)| e.frame != f) {
            return Err(Error::contract(format!("run {} covers different frames than the baseline", run.mode)));
        }
        let n = frames.len().max(1) as f64;
        let pairs = || run.events.iter().zip(&baseline.events);
        rows.push(ComparisonRow {
            mode: run.mode.to_string(),
            decisions: frames.len(),
            accuracy: run.summary.accuracy,
            action_agreement: pairs().filter(|(a, b)| a.action == b.action).count() as f64 / n,
            prediction_agreement: pairs().filter(|(a, b)| a.predicted == b.predicted).count() as f64 / n,
            alerts: run.summary.alerts,
            attack_frames: run.summary.attack_frames,
            attack_frames_alerted: run.summary.attack_frames_alerted,
        });
    }
    Ok(rows)
}

#[derive(Serialize, Deserialize)]
struct LogHeader {
    kind: String,
    tool_version: String,
    config_hash: Option<String>,
    seed: u64,
    mode: RunMode,
    trace_id: String,
    sample_rate: f64,
    decision_interval: usize,
    attack_frames: Option<(usize, usize)>,
}

fn header(report: &RunReport) -> LogHeader {
    LogHeader {
        kind: "event_log".into(),
        tool_version: TOOL_VERSION.into(),
        config_hash: report.config_hash.clone(),
        seed: report.seed,
        mode: report.mode,
        trace_id: report.trace_id.clone(),
        sample_rate: report.sample_rate,
        decision_interval: report.decision_interval,
        attack_frames: report.attack_frames,
    }
}

fn comment_line(report: &RunReport) -> String {
    format!(
        "# tool_version={} config_hash={} seed={} mode={}\n",
        TOOL_VERSION,
        report.config_hash.as_deref().unwrap_or("none"),
        report.seed,
        report.mode
    )
}

/// JSON lines: a header object, then one event per line.
pub fn write_event_log<W: Write>(report: &RunReport, mut sink: W) -> Result<()> {
    serde_json::to_writer(&mut sink, &header(report))?;
    sink.write_all(b"\n")?;
    for e in &report.events {
        serde_json::to_writer(&mut sink, e)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

/// Header object and events of an event log.
pub fn read_event_log<R: Read>(source: R) -> Result<(serde_json::Value, Vec<PipelineEvent>)> {
    let mut lines = BufReader::new(source).lines();
    let first = lines.next().ok_or_else(|| Error::Schema("event log is empty".into()))??;
    let head: serde_json::Value = serde_json::from_str(&first)?;
    if head.get("kind").and_then(|k| k.as_str()) != Some("event_log") {
        return Err(Error::Schema("missing event log header".into()));
    }
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            events.push(serde_json::from_str(&line).map_err(|e| Error::Parse { row: i + 2, detail: e.to_string() })?);
        }
    }
    Ok((head, events))
}

/// Rebuilds a report from an event log. Latencies are not logged, so the
/// latency fields of the summary are zero.
pub fn report_from_log<R: Read>(source: R) -> Result<RunReport> {
    let (head, events) = read_event_log(source)?;
    let h: LogHeader = serde_json::from_value(head).map_err(|e| Error::Schema(format!("event log header: {e}")))?;
    if h.decision_interval == 0 || !(h.sample_rate > 0.0) {
        return Err(Error::Schema("event log header has no valid cadence".into()));
    }
    let summary = RunSummary::from_events(&events, h.decision_interval as f64 / h.sample_rate);
    Ok(RunReport {
        mode: h.mode,
        trace_id: h.trace_id,
        sample_rate: h.sample_rate,
        decision_interval: h.decision_interval,
        attack_frames: h.attack_frames,
        config_hash: h.config_hash,
        seed: h.seed,
        events,
        summary,
        warnings: Vec::new(),
        detections: Vec::new(),
    })
}

/// Per-decision series for plotting, preceded by a `#` provenance line.
pub fn write_timeline_csv<W: Write>(report: &RunReport, mut sink: W) -> Result<()> {
    sink.write_all(comment_line(report).as_bytes())?;
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["frame", "time_s", "true_label", "predicted", "attack_active", "verdict", "score", "action", "alert"])?;
    for e in &report.events {
        let verdict = match e.verdict {
            Verdict::Normal => "normal",
            Verdict::Attack => "attack",
            Verdict::DetectorDisabled => "detector_disabled",
        };
        w.write_record([
            e.frame.to_string(),
            format!("{:.3}", e.time_s),
            e.true_label.to_string(),
            e.predicted.to_string(),
            e.attack_active.to_string(),
            verdict.to_string(),
            e.score.map_or(String::new(), |s| format!("{s:.6}")),
            e.action.to_string(),
            e.alert.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-decision latency, kept apart from the reproducible logs.
pub fn write_latency_csv<W: Write>(report: &RunReport, mut sink: W) -> Result<()> {
    sink.write_all(comment_line(report).as_bytes())?;
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["frame", "latency_s"])?;
    for e in &report.events {
        w.write_record([e.frame.to_string(), format!("{:.9}", e.latency_s)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], config_hash: Option<&str>, mut sink: W) -> Result<()> {
    writeln!(sink, "# tool_version={} config_hash={}", TOOL_VERSION, config_hash.unwrap_or("none"))?;
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Severity;
    use crate::pipeline::MitigationAction;

    fn ev(frame: usize, predicted: Severity, attack_active: bool, alert: bool, latency_s: f64) -> PipelineEvent {
        PipelineEvent {
            frame,
            time_s: frame as f64 / 10.0,
            true_label: Severity::High,
            predicted,
            probabilities: vec![0.25; 4],
            attack_active,
            verdict: if alert { Verdict::Attack } else { Verdict::DetectorDisabled },
            score: None,
            action: MitigationAction::for_level(predicted),
            alert,
            latency_s,
        }
    }

    fn report(mode: RunMode, events: Vec<PipelineEvent>) -> RunReport {
        RunReport {
            mode,
            trace_id: "t".into(),
            sample_rate: 10.0,
            decision_interval: 1,
            attack_frames: None,
            config_hash: Some("abc".into()),
            seed: 1,
            summary: RunSummary::from_events(&events, 0.1),
            events,
            warnings: vec![],
            detections: vec![],
        }
    }

    #[test]
    fn summary_aggregates() {
        let events: Vec<_> = (0..20).map(|f| ev(f, Severity::High, f >= 10, f >= 15, f as f64)).collect();
        let s = RunSummary::from_events(&events, 0.1);
        assert_eq!((s.decisions, s.attack_frames, s.attack_frames_alerted, s.alerts, s.false_alerts), (20, 10, 5, 5, 0));
        assert_eq!(s.attack_alert_fraction, Some(0.5));
        assert_eq!(s.accuracy, 1.0);
        assert!((s.dwell_s[3] - 2.0).abs() < 1e-12);
        assert_eq!(s.latency_p95_s, 18.0);
    }

    #[test]
    fn comparisons() {
        let base = report(RunMode::Baseline, (0..10).map(|f| ev(f, Severity::High, false, false, 0.0)).collect());
        let rows = compare_runs(&base, &[&base]).unwrap();
        assert_eq!((rows[1].action_agreement, rows[1].prediction_agreement), (1.0, 1.0));
        // in-window frames 6..10 flip high → none
        let flipped = report(
            RunMode::Attacked,
            (0..10).map(|f| ev(f, if f >= 6 { Severity::None } else { Severity::High }, f >= 6, false, 0.0)).collect(),
        );
        let rows = compare_runs(&base, &[&flipped]).unwrap();
        assert!((rows[1].action_agreement - 0.6).abs() < 1e-12);
        let short = report(RunMode::Attacked, (0..9).map(|f| ev(f, Severity::High, false, false, 0.0)).collect());
        assert!(matches!(compare_runs(&base, &[&short]), Err(Error::Contract(_))));
    }

    #[test]
    fn event_log_round_trip_drops_latency() {
        let r = report(RunMode::Baseline, (0..3).map(|f| ev(f, Severity::Low, false, false, 0.5)).collect());
        let mut buf = Vec::new();
        write_event_log(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(!text.contains("latency"));
        assert!(text.lines().next().unwrap().contains("\"config_hash\":\"abc\""));
        let (head, events) = read_event_log(buf.as_slice()).unwrap();
        assert_eq!(head["mode"], "baseline");
        assert_eq!(events.len(), 3);
        assert_eq!(events[0].latency_s, 0.0);
        assert_eq!(events[1].action, MitigationAction::FoveatedDofBlur);
        let back = report_from_log(buf.as_slice()).unwrap();
        assert_eq!((back.mode, back.sample_rate, back.seed), (RunMode::Baseline, 10.0, 1));
        assert_eq!(back.summary.dwell_s, r.summary.dwell_s);
    }
}
