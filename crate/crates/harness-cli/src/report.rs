//! What a run boils down to: per-VM throughput, slowdown against the paired
//! baseline, detection timeline and accuracy, monitoring overhead, and the KS
//! time series — plus seed-sweep aggregation.

use defense::Phase;
use serde::{Deserialize, Serialize};

use crate::config::Role;
use crate::trace::TraceRecord;
use crate::{run_scenario, HarnessError, ScenarioConfig};

/// One tenant's measured outcome over the measurement span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmReport {
    pub vm_id: String,
    pub role: Role,
    pub completed_ops: u64,
    pub throughput_ops_per_ms: f64,
    /// Baseline throughput over defended/attacked throughput; ≥ 1 means the
    /// VM ran slower than it would on a machine with idle attackers. Absent
    /// for attackers and for VMs that completed nothing.
    pub slowdown: Option<f64>,
    /// Benign VMs under an enabled defense: fraction of undefended
    /// throughput lost to monitoring (1 − defended/undefended).
    pub overhead: Option<f64>,
}

/// Defense outcome against the scenario's ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub suspected_ms: Option<f64>,
    pub identified_ms: Option<f64>,
    pub mitigated_ms: Option<f64>,
    /// Tenants the pipeline blamed, in discovery order.
    pub identified: Vec<String>,
    /// Tenants the scenario declared as attackers.
    pub ground_truth: Vec<String>,
    pub true_positives: Vec<String>,
    pub false_positives: Vec<String>,
    pub false_negatives: Vec<String>,
    pub final_phase: Phase,
    pub monitor_rounds: u32,
    pub identification_rounds: u32,
    pub reference_refreshes: u32,
    pub false_alarm_suppressions: u32,
    /// Protected VM, from the first sample after mitigation to the end:
    /// baseline throughput over defended throughput.
    pub post_mitigation_slowdown: Option<f64>,
    /// Protected VM over the measurement span with the defense disabled:
    /// baseline throughput over undefended throughput.
    pub unmitigated_slowdown: Option<f64>,
}

impl DetectionReport {
    /// The scenario counts as a detection false positive if the monitor ever
    /// escalated to Suspected.
    pub fn suspected_any(&self) -> bool {
        self.suspected_ms.is_some()
    }

    /// Identified exactly the declared attackers, nothing else.
    pub fn identification_correct(&self) -> bool {
        self.false_positives.is_empty()
            && self.false_negatives.is_empty()
            && !self.ground_truth.is_empty()
    }
}

/// One point of the KS time series (monitoring and search rounds alike).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsPoint {
    pub time_ms: f64,
    pub statistic: f64,
    pub critical: f64,
    pub reject: bool,
}

/// Everything one scenario run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub duration_ms: u64,
    /// Actual measurement span (the start snaps to the first counter sample
    /// at or after `measure_from_ms`).
    pub measured_from_ms: f64,
    pub measured_to_ms: f64,
    pub vms: Vec<VmReport>,
    pub detection: Option<DetectionReport>,
    pub ks_series: Vec<KsPoint>,
    pub records: Vec<TraceRecord>,
}

impl Report {
    pub fn vm(&self, vm_id: &str) -> Option<&VmReport> {
        self.vms.iter().find(|v| v.vm_id == vm_id)
    }

    pub fn protected(&self) -> Option<&VmReport> {
        self.vms.iter().find(|v| v.role == Role::Protected)
    }
}

/// Per-VM aggregate over a seed sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmAggregate {
    pub vm_id: String,
    pub role: Role,
    pub mean_slowdown: Option<f64>,
    pub stddev_slowdown: Option<f64>,
    pub mean_overhead: Option<f64>,
}

/// One scenario repeated across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scenario: String,
    pub seeds: Vec<u64>,
    /// Fraction of seeds whose identified set equals the declared attackers;
    /// absent when the scenario declares none.
    pub true_positive_rate: Option<f64>,
    /// Benign scenarios: fraction of seeds that ever reached Suspected.
    /// Attack scenarios: fraction of seeds that blamed an innocent tenant.
    pub false_positive_rate: f64,
    /// Fraction of seeds with at least one single-window rejection — what the
    /// false-positive rate would be without the consecutive-rejection rule.
    pub single_test_positive_rate: f64,
    pub vms: Vec<VmAggregate>,
    pub runs: Vec<Report>,
}

fn mean_stddev(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Runs the scenario once per seed and aggregates detection rates and
/// slowdown statistics.
pub fn sweep(config: &ScenarioConfig, seeds: &[u64]) -> Result<SweepReport, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Config {
            field: "seeds".into(),
            message: "a sweep needs at least one seed".into(),
        });
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut c = config.clone();
        c.seed = seed;
        runs.push(run_scenario(&c)?);
    }

    let n = runs.len() as f64;
    let has_attackers = !config.attackers().is_empty();
    let true_positive_rate = has_attackers.then(|| {
        runs.iter()
            .filter(|r| r.detection.as_ref().is_some_and(|d| d.identification_correct()))
            .count() as f64
            / n
    });
    let false_positive_rate = runs
        .iter()
        .filter(|r| {
            r.detection.as_ref().is_some_and(|d| {
                if has_attackers {
                    !d.false_positives.is_empty()
                } else {
                    d.suspected_any()
                }
            })
        })
        .count() as f64
        / n;
    let single_test_positive_rate =
        runs.iter().filter(|r| r.ks_series.iter().any(|p| p.reject)).count() as f64 / n;

    let vms = config
        .vm
        .iter()
        .map(|vm| {
            let slowdowns: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.vm(&vm.vm_id).and_then(|v| v.slowdown))
                .collect();
            let overheads: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.vm(&vm.vm_id).and_then(|v| v.overhead))
                .collect();
            let slow = mean_stddev(&slowdowns);
            VmAggregate {
                vm_id: vm.vm_id.clone(),
                role: vm.role,
                mean_slowdown: slow.map(|(m, _)| m),
                stddev_slowdown: slow.map(|(_, s)| s),
                mean_overhead: mean_stddev(&overheads).map(|(m, _)| m),
            }
        })
        .collect();

    Ok(SweepReport {
        scenario: config.name.clone(),
        seeds: seeds.to_vec(),
        true_positive_rate,
        false_positive_rate,
        single_test_positive_rate,
        vms,
        runs,
    })
}
