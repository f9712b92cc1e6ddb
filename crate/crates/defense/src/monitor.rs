use ks_stats::{ks_decide, SampleWindow, Verdict};
use memsim_core::Simulator;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::identify::{identify_attackers, mitigate};
use crate::sampling::{collect_monitored, collect_reference};
use crate::{CounterSample, DefenseError, DetectionEvent, MonitorSchedule, Phase};

/// After this many identification passes the monitor stops escalating and
/// holds whatever mitigation is in place.
const MAX_IDENTIFICATIONS: u32 = 2;

/// Everything one monitoring run produced, in simulated-time order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonitorReport {
    pub events: Vec<DetectionEvent>,
    /// Per-round counter snapshots of every VM.
    pub samples: Vec<CounterSample>,
    /// Phase at the end of the run.
    pub phase: Phase,
    /// Tenants identified as attackers, in discovery order.
    pub identified: Vec<String>,
    /// Monitored windows tested (including escalation retests).
    pub monitor_rounds: u32,
    /// Sampling windows spent inside identification.
    pub identification_rounds: u32,
    /// Reference collections, the initial one included.
    pub reference_refreshes: u32,
    /// Rejection streaks that ended in an accept before identification ran.
    pub false_alarm_suppressions: u32,
    /// Every window sampled, in collection order.
    pub windows: Vec<SampleWindow>,
}

fn snapshot_counters(
    sim: &Simulator,
    samples: &mut Vec<CounterSample>,
) -> Result<(), DefenseError> {
    let time_ms = sim.now_ms();
    for vm in sim.vm_names() {
        let counters = sim.read_counters(&vm)?;
        samples.push(CounterSample { time_ms, vm, counters });
    }
    Ok(())
}

/// Runs the full pipeline over the protected VM for `duration_ms` of
/// simulated time: periodic monitored windows tested against a periodically
/// refreshed pseudo-isolated reference; after `consecutive_rejects`
/// rejections in a row, a fresh-reference retest, then binary-search
/// identification and duty-cycle mitigation of whoever it blames.
///
/// `seed` only matters when the schedule asks for cadence jitter; with
/// `jitter_fraction` zero the run is identical for every seed.
pub fn run_monitor(
    sim: &mut Simulator,
    schedule: &MonitorSchedule,
    protected: &str,
    duration_ms: u64,
    seed: u64,
) -> Result<MonitorReport, DefenseError> {
    schedule.validate()?;
    sim.vm_id(protected)?;
    let cycles_per_ms = sim.topology().config.cycles_per_ms;
    let end_cycle = sim.clock() + duration_ms * cycles_per_ms;
    let gap_cycles = (schedule.monitor_interval_ms - schedule.monitor_window_ms) * cycles_per_ms;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut report = MonitorReport {
        events: Vec::new(),
        samples: Vec::new(),
        phase: Phase::Normal,
        identified: Vec::new(),
        monitor_rounds: 0,
        identification_rounds: 0,
        reference_refreshes: 0,
        false_alarm_suppressions: 0,
        windows: Vec::new(),
    };
    let mut consecutive = 0u32;
    let mut identifications = 0u32;
    let settle_cycles = schedule.settle_ms() * cycles_per_ms;

    // The initial reference settles first in case the monitor is attached to
    // a machine already under attack: the throttle must drain the intruder's
    // cache footprint before the baseline is read.
    let mut reference = refresh_reference(sim, schedule, protected, &mut report, true)?;

    while sim.clock() < end_cycle {
        if report.phase == Phase::Suspected {
            // Retest against a fresh, settled reference: a stale reference is
            // the cheapest explanation for a rejection streak. The settle
            // after collection matters just as much — whatever the throttle
            // suppressed needs time to re-establish itself before the
            // deciding window, or a slow-rebuilding aggressor reads as clean.
            reference = refresh_reference(sim, schedule, protected, &mut report, true)?;
            sim.advance(settle_cycles);
        } else {
            let gap = if schedule.jitter_fraction == 0.0 {
                gap_cycles
            } else {
                let span = (schedule.jitter_fraction * gap_cycles as f64) as u64;
                gap_cycles - span + rng.gen_range(0..=2 * span)
            };
            sim.advance(gap);
            let age_ms = sim.now_ms() - reference.collected_at_ms;
            if age_ms >= schedule.reference_interval_ms as f64 {
                // Routine staleness refresh: unsettled, to keep the
                // co-tenants' throttled time (the monitoring overhead)
                // bounded. A refresh landing mid-attack can muddy one round;
                // the retest path above re-collects cleanly.
                reference = refresh_reference(sim, schedule, protected, &mut report, false)?;
                sim.advance(settle_cycles);
            }
        }

        let monitored = collect_monitored(sim, schedule, protected)?;
        let decision = ks_decide(&monitored, &reference, schedule.alpha)?;
        report.monitor_rounds += 1;
        let reject = decision.verdict == Verdict::Reject;
        if reject {
            consecutive += 1;
        } else {
            if consecutive > 0 {
                report.false_alarm_suppressions += 1;
            }
            consecutive = 0;
        }
        report.events.push(DetectionEvent::Decision {
            time_ms: monitored.collected_at_ms,
            statistic: decision.statistic,
            critical: decision.critical,
            reject,
            consecutive,
            reference_time_ms: reference.collected_at_ms,
        });
        report.windows.push(monitored);
        snapshot_counters(sim, &mut report.samples)?;

        let resting = if identifications > 0 { Phase::Mitigated } else { Phase::Normal };
        match report.phase {
            Phase::Suspected if reject => {
                set_phase(&mut report, sim.now_ms(), Phase::Identifying);
                let found = identify_attackers(sim, schedule, protected, &reference)?;
                report.identification_rounds += found.rounds;
                report.events.extend(found.events);
                report.windows.extend(found.windows);
                report.events.extend(mitigate(sim, schedule, &found.attackers)?);
                report.identified.extend(found.attackers);
                identifications += 1;
                consecutive = 0;
                set_phase(&mut report, sim.now_ms(), Phase::Mitigated);
            }
            Phase::Suspected => set_phase(&mut report, sim.now_ms(), resting),
            _ if consecutive >= schedule.consecutive_rejects
                && identifications < MAX_IDENTIFICATIONS =>
            {
                set_phase(&mut report, sim.now_ms(), Phase::Suspected);
            }
            _ => {}
        }
    }
    Ok(report)
}

fn set_phase(report: &mut MonitorReport, time_ms: f64, to: Phase) {
    let from = report.phase;
    report.phase = to;
    report.events.push(DetectionEvent::PhaseChange { time_ms, from, to });
}

fn refresh_reference(
    sim: &mut Simulator,
    schedule: &MonitorSchedule,
    protected: &str,
    report: &mut MonitorReport,
    settled: bool,
) -> Result<SampleWindow, DefenseError> {
    let settle_ms = if settled { schedule.settle_ms() } else { 0 };
    let reference = collect_reference(sim, schedule, protected, settle_ms)?;
    report.reference_refreshes += 1;
    report.events.push(DetectionEvent::ReferenceRefresh { time_ms: reference.collected_at_ms });
    report.windows.push(reference.clone());
    Ok(reference)
}
