//! Full pipeline runs on a small machine: benign tenants are left alone, a
//! bus-locking attacker is detected, pinned down by binary search, throttled,
//! and the victim's throughput comes back.

use defense::{run_monitor, DetectionEvent, MonitorMetric, MonitorReport, MonitorSchedule, Phase};
use memsim_core::{build_topology, OpSource, Simulator, TopologyConfig};
use workloads::{
    atomic_lock_workload, idle_workload, stream_workload, AtomicKind, DelayedSource, Locality,
    WorkloadSpec,
};

const MB: u64 = 1 << 20;
const KB: u64 = 1 << 10;

fn desk_sim(seed: u64) -> Simulator {
    Simulator::new(build_topology(TopologyConfig::desk_scale(), seed).unwrap())
}

/// Windows sized to the duty frame (160 ms at this scale) so one sub-window
/// covers exactly one duty window and throttled tenants contaminate the same
/// single sub-window in every collection.
fn frame_schedule() -> MonitorSchedule {
    MonitorSchedule {
        reference_window_ms: 160,
        monitor_window_ms: 160,
        monitor_interval_ms: 320,
        reference_interval_ms: 3200,
        sub_windows: 16,
        ..MonitorSchedule::default()
    }
}

/// Adds a VM in its own 4 MB region slot, optionally delaying its first op.
fn add_tenant(sim: &mut Simulator, name: &str, spec: &WorkloadSpec, slot: u64, delay_ms: u64) {
    let region = (slot * 4 * MB, 4 * MB);
    let geometry = sim.public_geometry();
    let sources = spec.instantiate(region, &geometry, slot).unwrap();
    sim.add_vm(name, spec.threads()).unwrap();
    let delay = delay_ms * geometry.cycles_per_ms;
    for (vcpu, src) in sources.into_iter().enumerate() {
        let src: Box<dyn OpSource> =
            if delay_ms == 0 { src } else { Box::new(DelayedSource::new(delay, src)) };
        sim.bind_source(name, vcpu as u32, src).unwrap();
    }
}

fn warm(sim: &mut Simulator, ms: u64) {
    sim.advance(ms * sim.topology().config.cycles_per_ms);
}

fn victim_spec() -> WorkloadSpec {
    stream_workload(64 * KB, Locality::High).unwrap()
}

fn benign_spec() -> WorkloadSpec {
    stream_workload(24 * KB, Locality::High).unwrap()
}

fn locker_spec() -> WorkloadSpec {
    atomic_lock_workload(AtomicKind::Unaligned)
}

/// Victim llc-access rate (per ms) over the next `ms` of simulated time.
fn victim_rate(sim: &mut Simulator, ms: u64) -> f64 {
    let before = sim.read_counters("victim").unwrap().llc_accesses;
    warm(sim, ms);
    let after = sim.read_counters("victim").unwrap().llc_accesses;
    (after - before) as f64 / ms as f64
}

fn search_rounds(report: &MonitorReport) -> usize {
    report
        .events
        .iter()
        .filter(|e| matches!(e, DetectionEvent::SearchRound { .. }))
        .count()
}

fn decisions(report: &MonitorReport) -> Vec<(f64, bool)> {
    report
        .events
        .iter()
        .filter_map(|e| match e {
            DetectionEvent::Decision { time_ms, reject, .. } => Some((*time_ms, *reject)),
            _ => None,
        })
        .collect()
}

#[test]
fn benign_tenants_never_trigger_identification() {
    let mut sim = desk_sim(11);
    add_tenant(&mut sim, "victim", &victim_spec(), 0, 0);
    for (i, name) in ["shop", "mail", "build"].iter().enumerate() {
        add_tenant(&mut sim, name, &benign_spec(), i as u64 + 1, 0);
    }
    warm(&mut sim, 6000);

    let report = run_monitor(&mut sim, &frame_schedule(), "victim", 10_000, 7).unwrap();

    assert_eq!(report.phase, Phase::Normal);
    assert!(report.identified.is_empty());
    assert_eq!(search_rounds(&report), 0);
    assert!(decisions(&report).iter().all(|(_, reject)| !reject), "steady state must accept");
    assert_eq!(report.false_alarm_suppressions, 0);
    assert!(report.monitor_rounds >= 20, "got {} rounds", report.monitor_rounds);
    assert!(report.reference_refreshes >= 2);
    for name in ["shop", "mail", "build"] {
        assert_eq!(sim.duty_ratio(name).unwrap(), 16);
    }
}

#[test]
fn bus_locking_attacker_is_identified_throttled_and_the_victim_recovers() {
    let mut sim = desk_sim(12);
    add_tenant(&mut sim, "victim", &victim_spec(), 0, 0);
    add_tenant(&mut sim, "shop", &benign_spec(), 1, 0);
    add_tenant(&mut sim, "locker", &locker_spec(), 2, 8000);
    add_tenant(&mut sim, "mail", &benign_spec(), 3, 0);
    warm(&mut sim, 6000);
    let clean_rate = victim_rate(&mut sim, 1000);

    let report = run_monitor(&mut sim, &frame_schedule(), "victim", 20_000, 7).unwrap();

    assert_eq!(report.identified, vec!["locker".to_string()]);
    assert_eq!(report.phase, Phase::Mitigated);
    assert_eq!(sim.duty_ratio("locker").unwrap(), 1);
    assert_eq!(sim.duty_ratio("shop").unwrap(), 16);
    assert_eq!(sim.duty_ratio("mail").unwrap(), 16);

    let ds = decisions(&report);
    let first_reject = ds.iter().find(|(_, r)| *r).map(|(t, _)| *t).unwrap();
    assert!(first_reject >= 8000.0, "no rejection before the attack starts");
    let (last_time, last_reject) = *ds.last().unwrap();
    assert!(!last_reject && last_time > first_reject, "monitoring must settle after mitigation");

    let mitigated_rate = victim_rate(&mut sim, 1000);
    assert!(
        mitigated_rate >= 0.85 * clean_rate,
        "mitigated rate {mitigated_rate:.1}/ms vs clean {clean_rate:.1}/ms"
    );
    sim.set_duty_cycle("locker", 16).unwrap();
    warm(&mut sim, 500);
    let unmitigated_rate = victim_rate(&mut sim, 1000);
    assert!(
        unmitigated_rate <= 0.5 * clean_rate,
        "unthrottled locker should wreck the victim, got {unmitigated_rate:.1}/ms vs {clean_rate:.1}/ms"
    );
}

#[test]
fn one_attacker_among_eight_costs_three_splits_and_one_verification() {
    let mut sim = desk_sim(13);
    add_tenant(&mut sim, "victim", &victim_spec(), 0, 0);
    for (i, name) in ["c0", "c1", "c2"].iter().enumerate() {
        add_tenant(&mut sim, name, &idle_workload(), i as u64 + 1, 0);
    }
    add_tenant(&mut sim, "locker", &locker_spec(), 4, 7000);
    for (i, name) in ["c3", "c4", "c5", "c6"].iter().enumerate() {
        add_tenant(&mut sim, name, &idle_workload(), i as u64 + 5, 0);
    }
    warm(&mut sim, 6000);

    let report = run_monitor(&mut sim, &frame_schedule(), "victim", 20_000, 7).unwrap();

    assert_eq!(report.identified, vec!["locker".to_string()]);
    assert_eq!(report.identification_rounds, 4, "ceil(log2 8) splits plus one verification");
    assert_eq!(search_rounds(&report), 4);
    assert_eq!(sim.duty_ratio("locker").unwrap(), 1);
}

#[test]
fn two_simultaneous_attackers_are_both_found_without_blaming_innocents() {
    let mut sim = desk_sim(14);
    add_tenant(&mut sim, "victim", &victim_spec(), 0, 0);
    add_tenant(&mut sim, "locker-a", &locker_spec(), 1, 7000);
    add_tenant(&mut sim, "shop", &benign_spec(), 2, 0);
    add_tenant(&mut sim, "locker-b", &locker_spec(), 3, 7000);
    add_tenant(&mut sim, "mail", &benign_spec(), 4, 0);
    warm(&mut sim, 6000);

    let report = run_monitor(&mut sim, &frame_schedule(), "victim", 20_000, 7).unwrap();

    let mut found = report.identified.clone();
    found.sort();
    assert_eq!(found, vec!["locker-a".to_string(), "locker-b".to_string()]);
    assert!(
        report.identification_rounds <= 6,
        "two culprits among four tenants need at most 2*(2+1) windows, got {}",
        report.identification_rounds
    );
    assert_eq!(sim.duty_ratio("locker-a").unwrap(), 1);
    assert_eq!(sim.duty_ratio("locker-b").unwrap(), 1);
    assert_eq!(sim.duty_ratio("shop").unwrap(), 16);
    assert_eq!(sim.duty_ratio("mail").unwrap(), 16);
}

#[test]
fn late_second_attacker_reopens_identification_then_the_monitor_holds() {
    let mut sim = desk_sim(15);
    add_tenant(&mut sim, "victim", &victim_spec(), 0, 0);
    add_tenant(&mut sim, "locker-a", &locker_spec(), 1, 7000);
    add_tenant(&mut sim, "shop", &benign_spec(), 2, 0);
    add_tenant(&mut sim, "locker-b", &locker_spec(), 3, 16_000);
    add_tenant(&mut sim, "locker-c", &locker_spec(), 4, 26_000);
    warm(&mut sim, 6000);

    let report = run_monitor(&mut sim, &frame_schedule(), "victim", 28_000, 7).unwrap();

    assert_eq!(report.identified, vec!["locker-a".to_string(), "locker-b".to_string()]);
    assert_eq!(sim.duty_ratio("locker-a").unwrap(), 1);
    assert_eq!(sim.duty_ratio("locker-b").unwrap(), 1);
    // The third wave arrives after the escalation budget is spent: the
    // monitor keeps rejecting but holds instead of searching again.
    assert_eq!(sim.duty_ratio("locker-c").unwrap(), 16);
    assert_eq!(report.phase, Phase::Mitigated);
    assert!(decisions(&report).last().unwrap().1, "the held attacker keeps the verdict red");
    let identifications = report
        .events
        .iter()
        .filter(|e| matches!(e, DetectionEvent::PhaseChange { to: Phase::Identifying, .. }))
        .count();
    assert_eq!(identifications, 2);
}

/// A reference taken while an active attacker is throttled to 1/16 should be
/// statistically indistinguishable from the victim's behaviour on a machine
/// where that tenant never runs at all.
#[test]
fn pseudo_isolated_reference_matches_a_truly_quiet_machine() {
    let schedule = frame_schedule();

    // The victim warms up before the attack starts at 6 s; the reference is
    // taken two seconds into the attack.
    let mut noisy = desk_sim(21);
    add_tenant(&mut noisy, "victim", &victim_spec(), 0, 0);
    add_tenant(&mut noisy, "locker", &locker_spec(), 1, 6000);
    warm(&mut noisy, 8000);
    let reference = defense::collect_reference(&mut noisy, &schedule, "victim", 0).unwrap();

    let mut quiet = desk_sim(21);
    add_tenant(&mut quiet, "victim", &victim_spec(), 0, 0);
    add_tenant(&mut quiet, "locker", &idle_workload(), 1, 0);
    warm(&mut quiet, 8000);
    let isolated = defense::collect_monitored(&mut quiet, &schedule, "victim").unwrap();

    let vs_isolated = ks_stats::ks_decide(&isolated, &reference, schedule.alpha).unwrap();
    assert_eq!(vs_isolated.verdict, ks_stats::Verdict::Accept, "d = {}", vs_isolated.statistic);

    // The same reference still exposes the attacker once it runs unthrottled.
    let under_attack = defense::collect_monitored(&mut noisy, &schedule, "victim").unwrap();
    let vs_attack = ks_stats::ks_decide(&under_attack, &reference, schedule.alpha).unwrap();
    assert_eq!(vs_attack.verdict, ks_stats::Verdict::Reject, "d = {}", vs_attack.statistic);
}

#[test]
fn cadence_jitter_varies_decision_spacing_without_false_alarms() {
    let run = |seed: u64| {
        let mut sim = desk_sim(13);
        add_tenant(&mut sim, "victim", &victim_spec(), 0, 0);
        add_tenant(&mut sim, "shop", &benign_spec(), 1, 0);
        warm(&mut sim, 6000);
        let schedule = MonitorSchedule { jitter_fraction: 0.2, ..frame_schedule() };
        run_monitor(&mut sim, &schedule, "victim", 8_000, seed).unwrap()
    };

    let a = run(1);
    let b = run(2);
    for report in [&a, &b] {
        assert_eq!(report.phase, Phase::Normal);
        assert!(decisions(report).iter().all(|(_, reject)| !reject));
    }

    let spacing: Vec<f64> =
        decisions(&a).windows(2).map(|w| w[1].0 - w[0].0).collect();
    assert!(
        spacing.iter().any(|gap| (gap - spacing[0]).abs() > 1e-9),
        "jitter must vary the cadence: {spacing:?}"
    );
    let times = |r: &MonitorReport| -> Vec<f64> { decisions(r).iter().map(|d| d.0).collect() };
    assert_ne!(times(&a), times(&b), "different seeds must jitter differently");
}

/// With the byte metric each sub-window counts DRAM lines moved, so the
/// window totals must match the counter delta and come in whole lines.
#[test]
fn byte_metric_windows_count_dram_lines() {
    let mut sim = desk_sim(14);
    // A stream far larger than the 512 KB LLC misses constantly.
    add_tenant(&mut sim, "victim", &stream_workload(4 * MB, Locality::Low).unwrap(), 0, 0);
    warm(&mut sim, 2000);

    let schedule = MonitorSchedule { metric: MonitorMetric::BytesTransferred, ..frame_schedule() };
    let before = sim.read_counters("victim").unwrap().bytes_transferred;
    let window = defense::collect_monitored(&mut sim, &schedule, "victim").unwrap();
    let after = sim.read_counters("victim").unwrap().bytes_transferred;

    let total: f64 = window.values.iter().sum();
    assert_eq!(total as u64, after - before);
    assert!(total > 0.0);
    assert!(window.values.iter().all(|v| *v as u64 % 64 == 0), "whole 64-byte lines only");
}
