//! Line-delimited trace records and the replay check that proves a trace is
//! self-consistent: every logged test decision must be re-derivable from the
//! logged sample windows alone.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use ks_stats::{ks_decide, SampleWindow, WindowKind};
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    CounterSample,
    KsDecision,
    PhaseChange,
    DutyChange,
    ProbeResult,
}

/// One timestamped observation. Counter samples come in two payload shapes:
/// whole-VM counter snapshots (`counters`) and the protected VM's
/// per-sub-window deltas (`window` + `values`), which feed the replay check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time_ms: f64,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vm_id: Option<String>,
    pub payload: serde_json::Value,
}

/// Writes the report's records one JSON object per line.
pub fn export_trace(report: &Report, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let io_err = |source| HarnessError::Io { path: path.display().to_string(), source };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for record in &report.records {
        let line = serde_json::to_string(record)
            .map_err(|e| HarnessError::Internal(format!("record serialization: {e}")))?;
        file.write_all(line.as_bytes()).map_err(io_err)?;
        file.write_all(b"\n").map_err(io_err)?;
    }
    file.flush().map_err(io_err)?;
    Ok(())
}

/// Reads a line-delimited trace back.
pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| HarnessError::Trace(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// What [`verify_trace`] established about a trace.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct TraceSummary {
    pub records: usize,
    pub counter_samples: usize,
    pub ks_decisions: usize,
    pub phase_changes: usize,
    pub duty_changes: usize,
    pub probe_results: usize,
    /// Decisions whose statistic and threshold were recomputed from logged
    /// windows and matched bit for bit.
    pub replayed: usize,
}

fn field_f64(payload: &serde_json::Value, name: &str) -> Option<f64> {
    payload.get(name).and_then(|v| v.as_f64())
}

/// Checks ordering and value invariants, then replays every decision that
/// references logged windows: the recomputed statistic and critical value
/// must equal the logged ones exactly.
pub fn verify_trace(records: &[TraceRecord]) -> Result<TraceSummary, HarnessError> {
    let mut summary = TraceSummary { records: records.len(), ..TraceSummary::default() };
    let bad = |msg: String| Err(HarnessError::Trace(msg));

    for pair in records.windows(2) {
        if pair[1].time_ms < pair[0].time_ms {
            return bad(format!(
                "timestamps go backwards: {} after {}",
                pair[1].time_ms, pair[0].time_ms
            ));
        }
    }

    // Window samples indexed by exact timestamp.
    let mut windows: HashMap<u64, SampleWindow> = HashMap::new();
    for r in records {
        if r.kind != RecordKind::CounterSample {
            continue;
        }
        let Some(kind) = r.payload.get("window").and_then(|v| v.as_str()) else { continue };
        let kind = match kind {
            "reference" => WindowKind::Reference,
            "monitored" => WindowKind::Monitored,
            other => return bad(format!("unknown window kind \"{other}\"")),
        };
        let values: Vec<f64> = r
            .payload
            .get("values")
            .and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
            .unwrap_or_default();
        let window = SampleWindow::new(values, kind, r.time_ms)
            .map_err(|e| HarnessError::Trace(format!("window at {} ms: {e}", r.time_ms)))?;
        windows.insert(r.time_ms.to_bits(), window);
    }

    for r in records {
        match r.kind {
            RecordKind::CounterSample => summary.counter_samples += 1,
            RecordKind::PhaseChange => summary.phase_changes += 1,
            RecordKind::DutyChange => summary.duty_changes += 1,
            RecordKind::ProbeResult => summary.probe_results += 1,
            RecordKind::KsDecision => {
                summary.ks_decisions += 1;
                let statistic = field_f64(&r.payload, "statistic")
                    .ok_or_else(|| HarnessError::Trace("decision lacks a statistic".into()))?;
                if !(0.0..=1.0).contains(&statistic) {
                    return bad(format!("statistic {statistic} outside [0, 1]"));
                }
                if r.payload.get("reject").and_then(|v| v.as_bool()).is_none() {
                    return bad(format!("decision at {} ms lacks a verdict", r.time_ms));
                }
                let (Some(reference_time), Some(alpha), Some(critical)) = (
                    field_f64(&r.payload, "reference_time_ms"),
                    field_f64(&r.payload, "alpha"),
                    field_f64(&r.payload, "critical"),
                ) else {
                    return bad(format!("decision at {} ms is missing replay fields", r.time_ms));
                };
                let Some(monitored) = windows.get(&r.time_ms.to_bits()) else {
                    return bad(format!("no monitored window logged at {} ms", r.time_ms));
                };
                let Some(reference) = windows.get(&reference_time.to_bits()) else {
                    return bad(format!("no reference window logged at {reference_time} ms"));
                };
                let redo = ks_decide(monitored, reference, alpha)
                    .map_err(|e| HarnessError::Trace(format!("replay at {} ms: {e}", r.time_ms)))?;
                if redo.statistic != statistic || redo.critical != critical {
                    return bad(format!(
                        "replay mismatch at {} ms: logged D = {statistic} / critical {critical}, \
                         recomputed D = {} / critical {}",
                        r.time_ms, redo.statistic, redo.critical
                    ));
                }
                summary.replayed += 1;
            }
        }
    }
    Ok(summary)
}
