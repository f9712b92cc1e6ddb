use ks_stats::{ks_decide, SampleWindow, Verdict};
use memsim_core::Simulator;

use crate::sampling::{advance_to_frame_boundary, collect_monitored, settle};
use crate::{DefenseError, DetectionEvent, MonitorSchedule};

/// Which tenants the search blamed and what it cost to find them.
#[derive(Debug, Clone)]
pub struct Identification {
    pub attackers: Vec<String>,
    /// Sampling windows spent searching and verifying.
    pub rounds: u32,
    pub events: Vec<DetectionEvent>,
    /// Monitored windows collected during the search, in order.
    pub windows: Vec<SampleWindow>,
}

/// Throttles `group`, waits for the change to take force and the machine to
/// settle into the new regime, tests a fresh monitored window against the
/// reference, then restores the group's duty ratios. Returns whether the
/// test still rejected.
///
/// The settle is load-bearing: a cache-polluting attacker that was audible
/// in the previous round leaves residue that drains only at the throttled
/// rate, and one that was muted needs time to re-pollute. Sampling too early
/// would attribute the previous round's state to this round's grouping.
fn throttled_test(
    sim: &mut Simulator,
    schedule: &MonitorSchedule,
    protected: &str,
    reference: &SampleWindow,
    group: &[String],
    events: &mut Vec<DetectionEvent>,
    windows: &mut Vec<SampleWindow>,
) -> Result<bool, DefenseError> {
    let mut saved = Vec::with_capacity(group.len());
    for vm in group {
        saved.push((vm.clone(), sim.duty_ratio(vm)?));
        sim.set_duty_cycle(vm, schedule.reference_throttle)?;
    }
    advance_to_frame_boundary(sim);
    settle(sim, schedule);
    let monitored = collect_monitored(sim, schedule, protected)?;
    let decision = ks_decide(&monitored, reference, schedule.alpha)?;
    for (vm, k) in &saved {
        sim.set_duty_cycle(vm, *k)?;
    }
    advance_to_frame_boundary(sim);
    let reject = decision.verdict == Verdict::Reject;
    events.push(DetectionEvent::SearchRound {
        time_ms: monitored.collected_at_ms,
        throttled: group.to_vec(),
        statistic: decision.statistic,
        critical: decision.critical,
        reject,
        reference_time_ms: reference.collected_at_ms,
    });
    windows.push(monitored);
    Ok(reject)
}

/// Finds which co-tenants are perturbing the protected VM by binary search
/// over duty-cycle throttling.
///
/// Each split leaves half the remaining candidates running and throttles
/// every other unidentified co-tenant: a rejection means the running half
/// contains a culprit, an accept clears it. Leaving only the examined half
/// audible keeps each round a sound membership test even when several
/// attackers are active at once. A found attacker is left throttled and the
/// result verified with one more window; a verification that still rejects
/// restarts the search over the remaining tenants (or retries once when none
/// remain).
pub fn identify_attackers(
    sim: &mut Simulator,
    schedule: &MonitorSchedule,
    protected: &str,
    reference: &SampleWindow,
) -> Result<Identification, DefenseError> {
    let mut free: Vec<String> =
        sim.vm_names().into_iter().filter(|v| v != protected).collect();
    if free.is_empty() {
        return Err(DefenseError::NoCandidates);
    }
    let mut attackers = Vec::new();
    let mut rounds = 0u32;
    let mut events = Vec::new();
    let mut windows = Vec::new();
    let mut retried = false;

    loop {
        let mut candidates = free.clone();
        while candidates.len() > 1 {
            let half: Vec<String> = candidates[..candidates.len() / 2].to_vec();
            let muted: Vec<String> =
                free.iter().filter(|v| !half.contains(v)).cloned().collect();
            let reject = throttled_test(
                sim,
                schedule,
                protected,
                reference,
                &muted,
                &mut events,
                &mut windows,
            )?;
            rounds += 1;
            candidates = if reject {
                half
            } else {
                candidates[half.len()..].to_vec()
            };
        }
        let suspect = candidates.pop().expect("free list is nonempty");
        sim.set_duty_cycle(&suspect, schedule.reference_throttle)?;
        events.push(DetectionEvent::AttackerIdentified {
            time_ms: sim.now_ms(),
            vm: suspect.clone(),
        });
        events.push(DetectionEvent::DutyChange {
            time_ms: sim.now_ms(),
            vm: suspect.clone(),
            ratio: schedule.reference_throttle,
        });
        free.retain(|v| v != &suspect);
        attackers.push(suspect);

        // With every found attacker muted, the protected VM should match its
        // reference again — once the found attacker's residue has drained.
        loop {
            advance_to_frame_boundary(sim);
            settle(sim, schedule);
            let monitored = collect_monitored(sim, schedule, protected)?;
            let decision = ks_decide(&monitored, reference, schedule.alpha)?;
            rounds += 1;
            let reject = decision.verdict == Verdict::Reject;
            events.push(DetectionEvent::SearchRound {
                time_ms: monitored.collected_at_ms,
                throttled: attackers.clone(),
                statistic: decision.statistic,
                critical: decision.critical,
                reject,
                reference_time_ms: reference.collected_at_ms,
            });
            windows.push(monitored);
            if !reject {
                return Ok(Identification { attackers, rounds, events, windows });
            }
            if !free.is_empty() {
                break;
            }
            if retried {
                return Err(DefenseError::Identification(
                    "anomaly persists with every co-tenant throttled".into(),
                ));
            }
            retried = true;
        }
    }
}

/// Pins every identified attacker at the mitigation ratio. The change is in
/// force when this returns. Tenants already at the target ratio are left
/// alone.
pub fn mitigate(
    sim: &mut Simulator,
    schedule: &MonitorSchedule,
    attackers: &[String],
) -> Result<Vec<DetectionEvent>, DefenseError> {
    let mut events = Vec::new();
    for vm in attackers {
        if sim.duty_ratio(vm)? == schedule.reference_throttle {
            continue;
        }
        sim.set_duty_cycle(vm, schedule.reference_throttle)?;
        events.push(DetectionEvent::DutyChange {
            time_ms: sim.now_ms(),
            vm: vm.clone(),
            ratio: schedule.reference_throttle,
        });
    }
    advance_to_frame_boundary(sim);
    Ok(events)
}
