//! The detection and mitigation pipeline protecting one tenant: distribution
//! monitoring of its LLC-access counters, pseudo-isolated reference sampling,
//! binary-search identification of the tenants causing an anomaly, and
//! duty-cycle throttling of whoever is found.

mod identify;
mod monitor;
mod sampling;
mod schedule;

use memsim_core::Counters;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use identify::{identify_attackers, mitigate, Identification};
pub use monitor::{run_monitor, MonitorReport};
pub use sampling::{collect_monitored, collect_reference};
pub use schedule::{MonitorMetric, MonitorSchedule};

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error("invalid monitor schedule: {0}")]
    InvalidSchedule(String),
    #[error("identification failed: {0}")]
    Identification(String),
    #[error("no co-tenants to search")]
    NoCandidates,
    #[error(transparent)]
    Sim(#[from] memsim_core::SimError),
    #[error(transparent)]
    Stats(#[from] ks_stats::KsError),
}

/// Where the pipeline currently stands for the protected VM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Normal,
    Suspected,
    Identifying,
    Mitigated,
}

/// Everything the pipeline did, in order, with simulated timestamps. Test
/// events name both windows by their collection timestamps so a trace
/// consumer can pair each verdict with its samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectionEvent {
    Decision {
        time_ms: f64,
        statistic: f64,
        critical: f64,
        reject: bool,
        consecutive: u32,
        reference_time_ms: f64,
    },
    ReferenceRefresh { time_ms: f64 },
    PhaseChange { time_ms: f64, from: Phase, to: Phase },
    SearchRound {
        time_ms: f64,
        throttled: Vec<String>,
        statistic: f64,
        critical: f64,
        reject: bool,
        reference_time_ms: f64,
    },
    AttackerIdentified { time_ms: f64, vm: String },
    DutyChange { time_ms: f64, vm: String, ratio: u8 },
}

/// One `read_counters` snapshot taken while monitoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterSample {
    pub time_ms: f64,
    pub vm: String,
    pub counters: Counters,
}
