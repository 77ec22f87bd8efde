//! Sensor traces: CSV ingestion, min-max normalization, windowing,
//! synthetic generation and dataset splits.

mod normalize;
mod split;
mod synth;
mod trace;
mod window;

pub use normalize::{apply_normalize, denormalize, fit_normalize, NormalizationStats};
pub(crate) use normalize::hex16;
pub use split::{split, split_indices, DatasetSplit, SplitConfig};
pub use synth::{synth_generate, SynthConfig};
pub use trace::{load_trace, load_trace_file, write_trace, SensorTrace, Severity, TraceSchema};
pub use window::{batch_tensor, read_windows, window, window_ending_at, write_windows, TimeSeriesWindow, DEFAULT_TIMESTEP};
