//! Closed-loop stream simulation: sliding-window classification, optional
//! attack injection, signature-based detection, gated mitigation and
//! timeline reports.

mod mitigation;
mod report;
mod schedule;
mod stream;

pub use mitigation::{mitigation_for, MitigationAction, Verdict};
pub use report::{
    compare_runs, read_event_log, report_from_log, write_comparison_csv, write_event_log, write_latency_csv, write_timeline_csv,
    ComparisonRow, RunSummary,
};
pub use schedule::InjectionSchedule;
pub use stream::{run_stream, Defense, PipelineEvent, RunMode, RunReport, StreamOptions};
