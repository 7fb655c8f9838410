//! Declarative scenarios run end to end: event generation, readout,
//! counting and analysis.

mod pipeline;
mod report;
mod run;
mod scenario;

pub use pipeline::{
    charge_threshold, fast_counts, full_counts, render_traces, Count, Readout, TraceSet,
};
pub use report::{emit_report, render_csv, render_text, two_significant, ReportFormat};
pub use run::{
    afterpulse_truth, dark_seed, gate_statistics, longest_empty_run, run_scenario, simulate_counts,
    Artifact, Column, ScanCurve,
};
pub use scenario::{
    AxisScale, ExecutionPath, Scenario, ScenarioKind, Sweep, TraceSpec, DEFAULT_GATES, FULL_GATES,
};
