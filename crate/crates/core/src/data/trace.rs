use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cybersickness severity class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    None,
    Low,
    Medium,
    High,
}

impl Severity {
    pub const ALL: [Severity; 4] = [Severity::None, Severity::Low, Severity::Medium, Severity::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Severity> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::None => "none",
            Severity::Low => "low",
            Severity::Medium => "medium",
            Severity::High => "high",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Severity {
    type Err = String;

    /// Accepts the four canonical names plus the questionnaire names
    /// slight / moderate / severe, which map to low / medium / high.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Severity::None),
            "low" | "slight" => Ok(Severity::Low),
            "medium" | "moderate" => Ok(Severity::Medium),
            "high" | "severe" => Ok(Severity::High),
            other => Err(format!("unknown severity label {other:?}")),
        }
    }
}

/// A timestamped multivariate sensor recording with one severity label per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorTrace {
    pub id: String,
    /// Frames per second.
    pub sample_rate: f64,
    pub feature_names: Vec<String>,
    /// Row-major `len() × n_features()` values.
    pub frames: Vec<f32>,
    pub labels: Vec<Severity>,
    /// Seconds, strictly increasing.
    pub timestamps: Vec<f64>,
    /// Fingerprint of the normalization stats applied to `frames`, if any.
    pub normalized_with: Option<String>,
}

impl SensorTrace {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.n_features();
        &self.frames[t * n..(t + 1) * n]
    }

    /// Checks the structural invariants: matching lengths, strictly
    /// increasing timestamps and spacing within 1% of `1 / sample_rate`.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_features();
        if n == 0 {
            return Err(Error::Schema("trace has no feature columns".into()));
        }
        if self.frames.len() != self.len() * n || self.timestamps.len() != self.len() {
            return Err(Error::contract(format!(
                "trace {}: {} labels, {} timestamps, {} values for {n} features",
                self.id,
                self.len(),
                self.timestamps.len(),
                self.frames.len()
            )));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::Schema(format!("sample rate {} is not positive", self.sample_rate)));
        }
        let period = 1.0 / self.sample_rate;
        for (i, w) in self.timestamps.windows(2).enumerate() {
            let dt = w[1] - w[0];
            if dt <= 0.0 {
                return Err(Error::Ordering {
                    row: i + 1,
                    detail: format!("timestamp {} does not follow {}", w[1], w[0]),
                });
            }
            if (dt - period).abs() > 0.01 * period {
                return Err(Error::Ordering {
                    row: i + 1,
                    detail: format!("frame spacing {dt:.6}s deviates from {period:.6}s by more than 1%"),
                });
            }
        }
        Ok(())
    }
}

/// Column layout expected by [`load_trace`].
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TraceSchema {
    /// Feature columns in model order. `None` takes every column other than
    /// `timestamp` and `label`, in header order.
    pub feature_columns: Option<Vec<String>>,
    /// Frames per second. `None` infers it from the first and last timestamps.
    pub sample_rate: Option<f64>,
}

/// Parses a trace CSV: header row with `timestamp`, `label` and feature columns.
pub fn load_trace<R: Read>(source: R, schema: &TraceSchema, id: &str) -> Result<SensorTrace> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let ts_col = find("timestamp")?;
    let label_col = find("label")?;
    let feature_names: Vec<String> = match &schema.feature_columns {
        Some(cols) => cols.clone(),
        None => header.iter().filter(|h| *h != "timestamp" && *h != "label").cloned().collect(),
    };
    if feature_names.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }
    let feature_cols = feature_names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;

    let mut frames = Vec::new();
    let mut labels = Vec::new();
    let mut timestamps = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let cell = |col: usize| record.get(col).unwrap_or("");
        let number = |col: usize| -> Result<f64> {
            let text = cell(col);
            let v: f64 = text.parse().map_err(|_| Error::Parse {
                row,
                detail: format!("column {:?}: {text:?} is not a number", header[col]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row, detail: format!("column {:?} is not finite", header[col]) });
            }
            Ok(v)
        };
        timestamps.push(number(ts_col)?);
        labels.push(cell(label_col).parse::<Severity>().map_err(|detail| Error::Parse { row, detail })?);
        for &c in &feature_cols {
            frames.push(number(c)? as f32);
        }
    }
    let sample_rate = match schema.sample_rate {
        Some(r) => r,
        None if timestamps.len() >= 2 => {
            let span = timestamps[timestamps.len() - 1] - timestamps[0];
            if span <= 0.0 {
                return Err(Error::Ordering { row: timestamps.len(), detail: "timestamps do not increase".into() });
            }
            (timestamps.len() - 1) as f64 / span
        }
        None => 1.0,
    };
    let trace = SensorTrace {
        id: id.to_string(),
        sample_rate,
        feature_names,
        frames,
        labels,
        timestamps,
        normalized_with: None,
    };
    trace.validate()?;
    Ok(trace)
}

pub fn load_trace_file(path: &Path, schema: &TraceSchema) -> Result<SensorTrace> {
    let file = std::fs::File::open(path)?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    load_trace(file, schema, id)
}

/// Writes `trace` in the CSV layout [`load_trace`] reads.
pub fn write_trace<W: Write>(trace: &SensorTrace, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["timestamp".to_string(), "label".to_string()];
    header.extend(trace.feature_names.iter().cloned());
    w.write_record(&header)?;
    for t in 0..trace.len() {
        let mut row = vec![format!("{}", trace.timestamps[t]), trace.labels[t].to_string()];
        row.extend(trace.frame(t).iter().map(|v| format!("{v}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
