//! Scenario harness around the contention simulator: loads declarative
//! experiment files, builds the machine and its tenants (probing or asking
//! the oracle for machine structure where a workload needs it), runs the
//! scenario with or without the defense pipeline, and reduces the outcome to
//! throughput, slowdown, detection, and overhead metrics plus a replayable
//! trace.

mod config;
mod report;
mod scenario;
mod trace;

pub use config::{
    load_scenario, DefenseSection, FloodModeConfig, Preset, Role, ScenarioConfig, TopologySection,
    VmConfig, WorkloadConfig,
};
pub use report::{
    sweep, DetectionReport, KsPoint, Report, SweepReport, VmAggregate, VmReport,
};
pub use scenario::run_scenario;
pub use trace::{export_trace, read_trace, verify_trace, RecordKind, TraceRecord};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario ({field}): {message}")]
    Config { field: String, message: String },
    #[error("workload construction failed for vm \"{vm}\": {message}")]
    Workload { vm: String, message: String },
    #[error("trace is inconsistent: {0}")]
    Trace(String),
    #[error(transparent)]
    Sim(#[from] memsim_core::SimError),
    #[error(transparent)]
    Defense(#[from] defense::DefenseError),
    #[error(transparent)]
    Probe(#[from] reverse_map::ProbeError),
    #[error("{0}")]
    Internal(String),
}

impl HarnessError {
    /// CLI exit code: configuration problems are 2, runtime failures 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Io { .. }
            | HarnessError::Parse(_)
            | HarnessError::Config { .. } => 2,
            _ => 3,
        }
    }
}
