use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::trace::{SensorTrace, Severity};

/// Default window length in frames.
pub const DEFAULT_TIMESTEP: usize = 90;

/// A `timestep × n_features` slice of a trace, labeled by its final frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesWindow {
    pub timestep: usize,
    pub n_features: usize,
    /// Row-major `timestep × n_features`.
    pub values: Vec<f32>,
    pub label: Severity,
    pub source: String,
    /// Index of the window's last frame in the source trace.
    pub end_frame: usize,
}

impl TimeSeriesWindow {
    /// Stable identifier `source:end_frame`.
    pub fn id(&self) -> String {
        format!("{}:{}", self.source, self.end_frame)
    }

    pub fn column(&self, feature: usize) -> impl Iterator<Item = f32> + '_ {
        self.values.iter().skip(feature).step_by(self.n_features).copied()
    }
}

/// Cuts windows ending at frames `timestep-1, timestep-1+stride, …`.
pub fn window(trace: &SensorTrace, timestep: usize, stride: usize) -> Result<Vec<TimeSeriesWindow>> {
    if timestep == 0 || stride == 0 {
        return Err(Error::config("timestep and stride must be positive"));
    }
    if trace.len() < timestep {
        return Err(Error::InsufficientData { needed: timestep, available: trace.len() });
    }
    let n = trace.n_features();
    Ok((timestep - 1..trace.len())
        .step_by(stride)
        .map(|end| window_at(trace, timestep, end, n))
        .collect())
}

/// The single window ending at `end` (requires `end + 1 >= timestep`).
pub fn window_ending_at(trace: &SensorTrace, timestep: usize, end: usize) -> Result<TimeSeriesWindow> {
    if end + 1 < timestep || end >= trace.len() {
        return Err(Error::InsufficientData { needed: timestep, available: end.min(trace.len()) + 1 });
    }
    Ok(window_at(trace, timestep, end, trace.n_features()))
}

fn window_at(trace: &SensorTrace, timestep: usize, end: usize, n: usize) -> TimeSeriesWindow {
    let start = end + 1 - timestep;
    TimeSeriesWindow {
        timestep,
        n_features: n,
        values: trace.frames[start * n..(end + 1) * n].to_vec(),
        label: trace.labels[end],
        source: trace.id.clone(),
        end_frame: end,
    }
}

/// Stacks windows into a `[batch, timestep, features]` tensor.
pub fn batch_tensor<'a, I>(windows: I) -> Result<Tensor>
where
    I: IntoIterator<Item = &'a TimeSeriesWindow>,
{
    let mut data = Vec::new();
    let mut shape: Option<(usize, usize)> = None;
    let mut count = 0;
    for w in windows {
        match shape {
            None => shape = Some((w.timestep, w.n_features)),
            Some(s) if s != (w.timestep, w.n_features) => {
                return Err(Error::contract(format!(
                    "window {} is {}×{}, batch is {}×{}",
                    w.id(),
                    w.timestep,
                    w.n_features,
                    s.0,
                    s.1
                )))
            }
            _ => {}
        }
        data.extend_from_slice(&w.values);
        count += 1;
    }
    let (t, n) = shape.ok_or_else(|| Error::contract("empty window batch"))?;
    Tensor::new(vec![count, t, n], data)
}

/// Writes windows as long-format CSV: `window_id,source,end_frame,label,step,<features>`.
pub fn write_windows<W: Write>(windows: &[TimeSeriesWindow], feature_names: &[String], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header: Vec<String> =
        ["window_id", "source", "end_frame", "label", "step"].iter().map(|s| s.to_string()).collect();
    header.extend(feature_names.iter().cloned());
    w.write_record(&header)?;
    for (k, win) in windows.iter().enumerate() {
        if win.n_features != feature_names.len() {
            return Err(Error::contract("feature name count differs from window width"));
        }
        for (step, row) in win.values.chunks(win.n_features).enumerate() {
            let mut rec = vec![
                k.to_string(),
                win.source.clone(),
                win.end_frame.to_string(),
                win.label.to_string(),
                step.to_string(),
            ];
            rec.extend(row.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the format produced by [`write_windows`]; returns the windows and feature names.
pub fn read_windows<R: Read>(source: R) -> Result<(Vec<TimeSeriesWindow>, Vec<String>)> {
    let mut r = csv::Reader::from_reader(source);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() < 6 || header[..5] != ["window_id", "source", "end_frame", "label", "step"] {
        return Err(Error::Schema("window file header must start with window_id,source,end_frame,label,step".into()));
    }
    let names = header[5..].to_vec();
    let n = names.len();
    let mut out: Vec<TimeSeriesWindow> = Vec::new();
    let mut current: Option<usize> = None;
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let int = |c: usize| -> Result<usize> {
            rec[c].parse().map_err(|_| Error::Parse { row, detail: format!("column {} not an integer", header[c]) })
        };
        let id = int(0)?;
        let step = int(4)?;
        let label = rec[3].parse::<Severity>().map_err(|detail| Error::Parse { row, detail })?;
        let mut values = Vec::with_capacity(n);
        for c in 5..5 + n {
            let v: f32 = rec[c].parse().map_err(|_| Error::Parse { row, detail: format!("column {} not a number", header[c]) })?;
            if !v.is_finite() {
                return Err(Error::Parse { row, detail: "non-finite value".into() });
            }
            values.push(v);
        }
        if current != Some(id) {
            if step != 0 {
                return Err(Error::Parse { row, detail: format!("window {id} does not start at step 0") });
            }
            out.push(TimeSeriesWindow {
                timestep: 0,
                n_features: n,
                values: Vec::new(),
                label,
                source: rec[1].to_string(),
                end_frame: int(2)?,
            });
            current = Some(id);
        }
        let w = out.last_mut().expect("pushed above");
        if step != w.timestep {
            return Err(Error::Parse { row, detail: format!("step {step} out of order") });
        }
        w.values.extend(values);
        w.timestep += 1;
    }
    if let Some(first) = out.first() {
        if out.iter().any(|w| w.timestep != first.timestep) {
            return Err(Error::Schema("windows have different lengths".into()));
        }
    }
    Ok((out, names))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(len: usize, n: usize) -> SensorTrace {
        SensorTrace {
            id: "ramp".into(),
            sample_rate: 10.0,
            feature_names: (0..n).map(|i| format!("f{i}")).collect(),
            frames: (0..len * n).map(|v| v as f32).collect(),
            labels: (0..len).map(|t| Severity::from_index(t % 4).unwrap()).collect(),
            timestamps: (0..len).map(|t| t as f64 / 10.0).collect(),
            normalized_with: None,
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(window(&ramp(300, 2), 90, 1).unwrap().len(), 211);
        assert_eq!(window(&ramp(90, 2), 90, 1).unwrap().len(), 1);
        assert_eq!(window(&ramp(300, 2), 90, 90).unwrap().len(), 3);
        assert!(matches!(window(&ramp(89, 2), 90, 1), Err(Error::InsufficientData { needed: 90, available: 89 })));
    }

    #[test]
    fn windows_are_exact_slices_labeled_by_last_frame() {
        let t = ramp(50, 3);
        for w in window(&t, 7, 3).unwrap() {
            let start = w.end_frame + 1 - 7;
            assert_eq!(w.values, t.frames[start * 3..(w.end_frame + 1) * 3]);
            assert_eq!(w.label, t.labels[w.end_frame]);
        }
        let first = &window(&t, 7, 3).unwrap()[0];
        assert_eq!(first.end_frame, 6);
        assert_eq!(first.column(1).collect::<Vec<_>>(), (0..7).map(|s| (s * 3 + 1) as f32).collect::<Vec<_>>());
    }

    #[test]
    fn batch_tensor_shape_and_mismatch() {
        let ws = window(&ramp(20, 2), 5, 5).unwrap();
        let b = batch_tensor(&ws).unwrap();
        assert_eq!(b.shape(), &[4, 5, 2]);
        let other = window(&ramp(20, 3), 5, 5).unwrap();
        assert!(batch_tensor([&ws[0], &other[0]]).is_err());
    }

    #[test]
    fn window_file_round_trip() {
        let t = ramp(30, 2);
        let ws = window(&t, 10, 7).unwrap();
        let mut buf = Vec::new();
        write_windows(&ws, &t.feature_names, &mut buf).unwrap();
        let (back, names) = read_windows(buf.as_slice()).unwrap();
        assert_eq!(names, t.feature_names);
        assert_eq!(back, ws);
    }
}
