//! Closed-loop evaluation: trials, metrics, the telemetry snapshot ring and report output.

pub mod controllers;
pub mod metrics;
pub mod report;
pub mod ring;
pub mod trial;

pub use controllers::{CenterlinePursuit, ConstantController, Controller, ExternalController, ReplayController};
pub use metrics::{compute_metrics, rmse_control, BoundaryFailure, LapCounter, Metrics, TickRecord};
pub use report::{emit_report, render_svg, ReportFiles};
pub use ring::{snapshot_ring, PushOutcome, RingReader, RingWriter, Snapshot};
pub use trial::{
    run_trial, run_trial_live, run_trial_with_sinks, ControllerTiming, LiveOptions, TelemetrySink, TrialConfig,
    TrialEnd, TrialReport,
};
