//! Turning a validated config into simulator runs.
//!
//! A scenario executes as a small family of deterministic runs on identical
//! machines (same topology, same seed, same hidden mappings):
//!
//! - the **main** run, with every tenant active and the defense attached if
//!   enabled;
//! - a **baseline** run with attacker VMs idled and no defense, giving each
//!   remaining tenant its contention-free throughput;
//! - an **undefended** run (attack scenarios with defense on) with attackers
//!   active and no defense, isolating what the defense changed.
//!
//! Workloads that depend on machine structure resolve *before* the family
//! runs: timing discovery happens on yet another identical machine carrying
//! the non-attacking tenants (a rehearsal the attacker performs ahead of
//! time), or the hidden-mapping oracle is consulted when the scenario allows
//! it. The resolved workload is then instantiated identically in every run.

use defense::{run_monitor, DetectionEvent, MonitorReport, Phase};
use memsim_core::{
    build_topology, Counters, MemoryTopology, OpSource, Simulator, TopologyConfig,
};
use reverse_map::{discover_bank_bits, discover_channel_bits, discover_hot_channels};
use serde_json::json;
use workloads::{
    adaptive_llc_cleanse, atomic_lock_workload, idle_workload, llc_cleanse_workload,
    mem_flood_workload, stream_workload_ext, EvictionBuffer, FloodMode, WorkloadSpec,
};

use crate::config::{FloodModeConfig, Role, ScenarioConfig, VmConfig, WorkloadConfig};
use crate::report::{DetectionReport, KsPoint, Report, VmReport};
use crate::trace::{RecordKind, TraceRecord};
use crate::HarnessError;

const MB: u64 = 1 << 20;
/// Counter-sample cadence outside monitored phases.
const SAMPLE_PERIOD_MS: u64 = 250;

fn workload_err(vm: &VmConfig, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Workload { vm: vm.vm_id.clone(), message: format!("{e}") }
}

/// Contiguous physical span each VM needs, padded for probe and flood
/// buffers and rounded to whole megabytes.
fn region_bytes(workload: &WorkloadConfig, cfg: &TopologyConfig) -> u64 {
    let llc = cfg.llc_bytes();
    let raw = match workload {
        WorkloadConfig::Idle | WorkloadConfig::AtomicLock { .. } => MB,
        WorkloadConfig::Stream { footprint, .. } => footprint + MB,
        WorkloadConfig::LlcCleanse { probe, .. } | WorkloadConfig::AdaptiveCleanse { probe, .. } => {
            // Timing discovery burns candidate addresses; the oracle fills
            // groups from a much smaller span.
            if *probe {
                32 * llc
            } else {
                4 * llc
            }
        }
        WorkloadConfig::MemFlood { mode: FloodModeConfig::Full, .. } => 20 * llc + MB,
        WorkloadConfig::MemFlood { mode: FloodModeConfig::Targeted, .. } => 8 * llc,
    };
    raw.div_ceil(MB) * MB
}

fn allocate_regions(
    config: &ScenarioConfig,
    cfg: &TopologyConfig,
) -> Result<Vec<(u64, u64)>, HarnessError> {
    let mut base = 0u64;
    let mut regions = Vec::with_capacity(config.vm.len());
    for vm in &config.vm {
        let len = region_bytes(&vm.workload, cfg);
        regions.push((base, len));
        base += len;
    }
    if base > cfg.mem_bytes {
        return Err(HarnessError::Config {
            field: "vm".into(),
            message: format!(
                "combined VM regions need {base} bytes but the machine has {}",
                cfg.mem_bytes
            ),
        });
    }
    Ok(regions)
}

/// Workload instantiation seed: varies per VM and per scenario seed.
fn vm_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9).wrapping_add(index as u64)
}

/// Fills one eviction group per (set, slice) straight from the hidden
/// mapping. The privileged shortcut for machines too large to probe in a
/// test run.
fn oracle_eviction_buffer(
    topo: &MemoryTopology,
    region: (u64, u64),
) -> Result<EvictionBuffer, HarnessError> {
    let cfg = &topo.config;
    let (sets, slices, ways) =
        (cfg.llc_sets_per_slice as usize, cfg.llc_slices as usize, cfg.llc_ways as usize);
    let mut groups = vec![vec![Vec::with_capacity(ways); slices]; sets];
    let mut filled = 0usize;
    let (base, len) = region;
    let mut addr = base;
    while addr < base + len && filled < sets * slices {
        let p = topo
            .resolve(addr)
            .map_err(|e| HarnessError::Internal(format!("oracle resolve: {e}")))?;
        let group = &mut groups[p.set_index as usize][p.slice_index as usize];
        if group.len() < ways {
            group.push(addr);
            if group.len() == ways {
                filled += 1;
            }
        }
        addr += cfg.line_size;
    }
    if filled < sets * slices {
        return Err(HarnessError::Internal(format!(
            "region of {len} bytes cannot fill every (set, slice) group"
        )));
    }
    EvictionBuffer::from_groups(groups, ways as u32)
        .map_err(|e| HarnessError::Internal(format!("oracle buffer: {e}")))
}

/// Ground-truth check of probed slice groups: full coverage, set-true and
/// slice-pure, one group per slice.
fn slice_groups_exact(topo: &MemoryTopology, buffer: &EvictionBuffer) -> bool {
    let cfg = &topo.config;
    if !buffer.covers(cfg.llc_sets_per_slice, cfg.llc_slices) {
        return false;
    }
    for set in 0..buffer.sets() {
        let mut seen = vec![false; cfg.llc_slices as usize];
        for group in buffer.groups(set) {
            let mut slices = group.iter().map(|&a| match topo.resolve(a) {
                Ok(p) if p.set_index == set => p.slice_index,
                _ => u32::MAX,
            });
            let Some(first) = slices.next() else { return false };
            if first == u32::MAX || slices.any(|s| s != first) {
                return false;
            }
            if std::mem::replace(&mut seen[first as usize], true) {
                return false;
            }
        }
        if !seen.iter().all(|&s| s) {
            return false;
        }
    }
    true
}

/// A machine identical to the scenario's, carrying every already-resolved
/// non-attacker tenant, advanced to `prober`'s start time. The prober VM
/// exists but issues nothing until discovery drives it.
fn build_probe_sim(
    config: &ScenarioConfig,
    topo: &MemoryTopology,
    regions: &[(u64, u64)],
    specs: &[Option<WorkloadSpec>],
    prober: usize,
) -> Result<Simulator, HarnessError> {
    let mut sim = Simulator::new(
        build_topology(topo.config.clone(), topo.seed)
            .map_err(|e| HarnessError::Internal(format!("probe machine: {e}")))?,
    );
    let geometry = sim.public_geometry();
    let cpm = topo.config.cycles_per_ms;
    for (i, vm) in config.vm.iter().enumerate() {
        if i == prober {
            // Two vCPUs minimum: some probes run a helper loop.
            sim.add_vm(&vm.vm_id, vm.vcpus().max(2))?;
            continue;
        }
        sim.add_vm(&vm.vm_id, vm.vcpus())?;
        // Other attackers stay quiet during this attacker's rehearsal.
        if vm.role == Role::Attacker {
            continue;
        }
        let Some(spec) = &specs[i] else { continue };
        let sources = spec
            .instantiate(regions[i], &geometry, vm_seed(config.seed, i))
            .map_err(|e| workload_err(vm, e))?;
        bind_sources(&mut sim, vm, sources, vm.start_time_ms * cpm)?;
    }
    sim.advance(config.vm[prober].start_time_ms * cpm);
    Ok(sim)
}

fn bind_sources(
    sim: &mut Simulator,
    vm: &VmConfig,
    sources: Vec<Box<dyn OpSource>>,
    delay_cycles: u64,
) -> Result<(), HarnessError> {
    for (vcpu, source) in sources.into_iter().enumerate() {
        let source: Box<dyn OpSource> = if delay_cycles == 0 {
            source
        } else {
            Box::new(workloads::DelayedSource::new(delay_cycles, source))
        };
        sim.bind_source(&vm.vm_id, vcpu as u32, source)?;
    }
    Ok(())
}

struct Resolution {
    specs: Vec<WorkloadSpec>,
    probe_records: Vec<TraceRecord>,
}

/// Resolves every workload to a concrete spec, running timing discovery or
/// consulting the oracle where the config asks for it.
fn resolve_workloads(
    config: &ScenarioConfig,
    topo: &MemoryTopology,
    regions: &[(u64, u64)],
) -> Result<Resolution, HarnessError> {
    let mut specs: Vec<Option<WorkloadSpec>> = vec![None; config.vm.len()];
    let mut records = Vec::new();

    // Structure-free workloads and oracle-built cleansers first; they seed
    // the probe machines for everything that must discover structure live.
    for (i, vm) in config.vm.iter().enumerate() {
        specs[i] = match &vm.workload {
            WorkloadConfig::Idle => Some(idle_workload()),
            WorkloadConfig::Stream { footprint, locality, stride_lines, pulse } => Some(
                stream_workload_ext(*footprint, *locality, *stride_lines, *pulse)
                    .map_err(|e| workload_err(vm, e))?,
            ),
            WorkloadConfig::AtomicLock { atomic } => Some(atomic_lock_workload(*atomic)),
            WorkloadConfig::LlcCleanse { threads, probe: false } => {
                let buffer = oracle_eviction_buffer(topo, regions[i])?;
                records.push(probe_record(vm, config.vm[i].start_time_ms, json!({
                    "structure": "slice_groups",
                    "source": "oracle",
                    "sets": buffer.sets(),
                    "addresses": buffer.total_addresses(),
                })));
                Some(llc_cleanse_workload(buffer, *threads).map_err(|e| workload_err(vm, e))?)
            }
            WorkloadConfig::MemFlood { threads, mode: FloodModeConfig::Full, .. } => {
                Some(mem_flood_workload(*threads, FloodMode::Full).map_err(|e| workload_err(vm, e))?)
            }
            WorkloadConfig::MemFlood {
                threads,
                mode: FloodModeConfig::Targeted,
                patterns: Some(patterns),
            } => Some(
                mem_flood_workload(*threads, FloodMode::Targeted { patterns: patterns.clone() })
                    .map_err(|e| workload_err(vm, e))?,
            ),
            _ => None,
        };
    }

    for (i, vm) in config.vm.iter().enumerate() {
        if specs[i].is_some() {
            continue;
        }
        match &vm.workload {
            WorkloadConfig::LlcCleanse { threads, probe: true } => {
                let buffer = probed_slice_groups(config, topo, regions, &specs, i, &mut records)?;
                specs[i] =
                    Some(llc_cleanse_workload(buffer, *threads).map_err(|e| workload_err(vm, e))?);
            }
            WorkloadConfig::AdaptiveCleanse { threads, probe } => {
                let buffer = if *probe {
                    probed_slice_groups(config, topo, regions, &specs, i, &mut records)?
                } else {
                    let buffer = oracle_eviction_buffer(topo, regions[i])?;
                    records.push(probe_record(vm, vm.start_time_ms, json!({
                        "structure": "slice_groups",
                        "source": "oracle",
                        "sets": buffer.sets(),
                        "addresses": buffer.total_addresses(),
                    })));
                    buffer
                };
                // The victim-set discovery stage always runs live against
                // the other tenants.
                let mut sim = build_probe_sim(config, topo, regions, &specs, i)?;
                let mut prober =
                    memsim_core::Prober::new(&mut sim, &vm.vm_id, 0, regions[i])?;
                let spec =
                    adaptive_llc_cleanse(&mut prober, &buffer, topo.config.llc_ways, *threads)
                        .map_err(|e| workload_err(vm, e))?;
                records.push(probe_record(vm, vm.start_time_ms, json!({
                    "structure": "victim_sets",
                    "source": "timing",
                    "count": spec.victim_sets().map_or(0, |s| s.len()),
                })));
                specs[i] = Some(spec);
            }
            WorkloadConfig::MemFlood { threads, mode: FloodModeConfig::Targeted, patterns: None } => {
                let mut sim = build_probe_sim(config, topo, regions, &specs, i)?;
                let mut prober =
                    memsim_core::Prober::new(&mut sim, &vm.vm_id, 0, regions[i])?;
                let bank_bits = discover_bank_bits(&mut prober)?;
                let channel_bits = discover_channel_bits(&mut prober, &bank_bits)?;
                let hot = discover_hot_channels(&mut prober, &channel_bits)?;
                let mut payload = json!({
                    "structure": "hot_channels",
                    "source": "timing",
                    "bank_bits": bank_bits,
                    "channel_bits": channel_bits,
                    "patterns": hot,
                });
                if config.oracle_checks {
                    payload["bank_bits_exact"] =
                        json!(bank_bits == topo.config.bank_bit_positions);
                    payload["channel_bits_exact"] =
                        json!(channel_bits == topo.config.channel_bit_positions);
                }
                records.push(probe_record(vm, vm.start_time_ms, payload));
                specs[i] = Some(
                    mem_flood_workload(*threads, FloodMode::Targeted { patterns: hot })
                        .map_err(|e| workload_err(vm, e))?,
                );
            }
            _ => unreachable!("first pass resolved every non-probing workload"),
        }
    }

    Ok(Resolution {
        specs: specs.into_iter().map(|s| s.expect("all workloads resolved")).collect(),
        probe_records: records,
    })
}

fn probed_slice_groups(
    config: &ScenarioConfig,
    topo: &MemoryTopology,
    regions: &[(u64, u64)],
    specs: &[Option<WorkloadSpec>],
    prober: usize,
    records: &mut Vec<TraceRecord>,
) -> Result<EvictionBuffer, HarnessError> {
    let vm = &config.vm[prober];
    let mut sim = build_probe_sim(config, topo, regions, specs, prober)?;
    let mut iface = memsim_core::Prober::new(&mut sim, &vm.vm_id, 0, regions[prober])?;
    let buffer = reverse_map::map_llc_slices(&mut iface)?;
    let mut payload = json!({
        "structure": "slice_groups",
        "source": "timing",
        "sets": buffer.sets(),
        "addresses": buffer.total_addresses(),
    });
    if config.oracle_checks {
        payload["exact"] = json!(slice_groups_exact(topo, &buffer));
    }
    records.push(probe_record(vm, vm.start_time_ms, payload));
    Ok(buffer)
}

fn probe_record(vm: &VmConfig, time_ms: u64, payload: serde_json::Value) -> TraceRecord {
    TraceRecord {
        time_ms: time_ms as f64,
        kind: RecordKind::ProbeResult,
        vm_id: Some(vm.vm_id.clone()),
        payload,
    }
}

/// All VMs' counters at one instant.
struct Snapshot {
    time_ms: f64,
    counters: Vec<Counters>,
}

struct RunOutcome {
    snapshots: Vec<Snapshot>,
    monitor: Option<MonitorReport>,
    final_ms: f64,
}

impl RunOutcome {
    /// First snapshot at or after `t`.
    fn snapshot_at_or_after(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.time_ms >= t)
    }

    /// Exact-time snapshot.
    fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.time_ms.to_bits() == t.to_bits())
    }
}

fn take_snapshot(sim: &Simulator, snapshots: &mut Vec<Snapshot>) -> Result<(), HarnessError> {
    let time_ms = sim.now_ms();
    if snapshots.last().is_some_and(|s| s.time_ms.to_bits() == time_ms.to_bits()) {
        return Ok(());
    }
    let counters = sim
        .vm_names()
        .iter()
        .map(|vm| sim.read_counters(vm))
        .collect::<Result<Vec<_>, _>>()?;
    snapshots.push(Snapshot { time_ms, counters });
    Ok(())
}

/// Advances to `target_cycles`, snapshotting on the sampling grid along the
/// way and exactly at the target.
fn advance_sampled(
    sim: &mut Simulator,
    target_cycles: u64,
    snapshots: &mut Vec<Snapshot>,
) -> Result<(), HarnessError> {
    let step = SAMPLE_PERIOD_MS * sim.topology().config.cycles_per_ms;
    while sim.clock() < target_cycles {
        let next = ((sim.clock() / step + 1) * step).min(target_cycles);
        sim.advance(next - sim.clock());
        take_snapshot(sim, snapshots)?;
    }
    Ok(())
}

/// One full simulator run.
///
/// `idle_attackers` swaps every attacker's workload for an idle stream (the
/// baseline machine); `with_defense` attaches the monitor at the configured
/// start. `stops_ms` are extra exact-time snapshot points, used to pair
/// companion runs with instants observed in the main run.
fn execute(
    config: &ScenarioConfig,
    topo: &MemoryTopology,
    regions: &[(u64, u64)],
    specs: &[WorkloadSpec],
    idle_attackers: bool,
    with_defense: bool,
    stops_ms: &[f64],
) -> Result<RunOutcome, HarnessError> {
    let mut sim = Simulator::new(
        build_topology(topo.config.clone(), topo.seed)
            .map_err(|e| HarnessError::Internal(format!("machine rebuild: {e}")))?,
    );
    let geometry = sim.public_geometry();
    let cpm = topo.config.cycles_per_ms;
    let idle = idle_workload();
    for (i, vm) in config.vm.iter().enumerate() {
        sim.add_vm(&vm.vm_id, vm.vcpus())?;
        let spec =
            if idle_attackers && vm.role == Role::Attacker { &idle } else { &specs[i] };
        if spec.is_idle() {
            continue;
        }
        let sources = spec
            .instantiate(regions[i], &geometry, vm_seed(config.seed, i))
            .map_err(|e| workload_err(vm, e))?;
        bind_sources(&mut sim, vm, sources, vm.start_time_ms * cpm)?;
    }

    let mut snapshots = Vec::new();
    take_snapshot(&sim, &mut snapshots)?;

    let to_cycles = |ms: f64| (ms * cpm as f64).round() as u64;
    let mut stops: Vec<u64> = stops_ms.iter().map(|&ms| to_cycles(ms)).collect();
    stops.push(config.measure_from_ms * cpm);
    stops.push(config.duration_ms * cpm);

    if with_defense {
        let start_cycles = config.defense.start_ms * cpm;
        stops.retain(|&s| s <= start_cycles);
        stops.sort_unstable();
        for stop in stops {
            advance_sampled(&mut sim, stop, &mut snapshots)?;
        }
        advance_sampled(&mut sim, start_cycles, &mut snapshots)?;
        let protected = config.protected_vm().expect("validated").vm_id.clone();
        let span = config.duration_ms - config.defense.start_ms;
        let report =
            run_monitor(&mut sim, &config.defense.schedule, &protected, span, config.seed)?;
        // The monitor's per-round samples continue the snapshot series.
        let mut round: Option<Snapshot> = None;
        for sample in &report.samples {
            match &mut round {
                Some(s) if s.time_ms.to_bits() == sample.time_ms.to_bits() => {
                    s.counters.push(sample.counters);
                }
                _ => {
                    if let Some(done) = round.take() {
                        snapshots.push(done);
                    }
                    round = Some(Snapshot {
                        time_ms: sample.time_ms,
                        counters: vec![sample.counters],
                    });
                }
            }
        }
        if let Some(done) = round.take() {
            snapshots.push(done);
        }
        take_snapshot(&sim, &mut snapshots)?;
        Ok(RunOutcome { snapshots, monitor: Some(report), final_ms: sim.now_ms() })
    } else {
        stops.sort_unstable();
        for stop in stops {
            advance_sampled(&mut sim, stop, &mut snapshots)?;
        }
        Ok(RunOutcome { snapshots, monitor: None, final_ms: sim.now_ms() })
    }
}

/// Throughput of VM `i` between two exact snapshot instants.
fn throughput(
    outcome: &RunOutcome,
    from_ms: f64,
    to_ms: f64,
    vm_index: usize,
) -> Option<(u64, f64)> {
    let a = outcome.snapshot_at(from_ms)?;
    let b = outcome.snapshot_at(to_ms)?;
    let ops = b.counters[vm_index].completed_ops - a.counters[vm_index].completed_ops;
    Some((ops, ops as f64 / (to_ms - from_ms)))
}

fn ratio(numerator: f64, denominator: f64) -> Option<f64> {
    (denominator > 0.0).then(|| numerator / denominator)
}

/// Runs the scenario family and reduces it to a [`Report`].
pub fn run_scenario(config: &ScenarioConfig) -> Result<Report, HarnessError> {
    config.validate()?;
    let topo = build_topology(config.topology.build_config(config.seed)?, config.seed)
        .map_err(|e| HarnessError::Config { field: "topology".into(), message: format!("{e}") })?;
    let regions = allocate_regions(config, &topo.config)?;
    let resolution = resolve_workloads(config, &topo, &regions)?;

    let defense_on = config.defense.enabled;
    let main = execute(config, &topo, &regions, &resolution.specs, false, defense_on, &[])?;

    // The measurement span starts at the first observed instant at or after
    // measure_from_ms; companions snapshot at exactly the same instants.
    let t0 = main
        .snapshot_at_or_after(config.measure_from_ms as f64)
        .ok_or_else(|| HarnessError::Internal("no sample after measure_from_ms".into()))?
        .time_ms;
    let t_end = main.final_ms;

    let events: &[DetectionEvent] =
        main.monitor.as_ref().map_or(&[], |m| m.events.as_slice());
    let suspected_ms = events.iter().find_map(|e| match e {
        DetectionEvent::PhaseChange { time_ms, to: Phase::Suspected, .. } => Some(*time_ms),
        _ => None,
    });
    let identified_ms = events.iter().find_map(|e| match e {
        DetectionEvent::AttackerIdentified { time_ms, .. } => Some(*time_ms),
        _ => None,
    });
    let mitigated_ms = events.iter().find_map(|e| match e {
        DetectionEvent::PhaseChange { time_ms, to: Phase::Mitigated, .. } => Some(*time_ms),
        _ => None,
    });
    let t_tail = mitigated_ms
        .and_then(|m| main.snapshot_at_or_after(m))
        .map(|s| s.time_ms)
        .filter(|&t| t < t_end);

    // The monitor may finish its last window past duration_ms; companions
    // must observe the same final instant.
    let mut stops = vec![t0, t_end];
    stops.extend(t_tail);
    let baseline =
        execute(config, &topo, &regions, &resolution.specs, true, false, &stops)?;
    let attackers = config.attackers();
    let undefended = (defense_on && !attackers.is_empty())
        .then(|| execute(config, &topo, &regions, &resolution.specs, false, false, &stops))
        .transpose()?;
    // With no attackers the baseline machine *is* the undefended machine.
    let undefended = undefended.as_ref().unwrap_or(&baseline);

    let mut vms = Vec::with_capacity(config.vm.len());
    let mut protected_index = None;
    for (i, vm) in config.vm.iter().enumerate() {
        if vm.role == Role::Protected {
            protected_index = Some(i);
        }
        let (ops, tp) = throughput(&main, t0, t_end, i)
            .ok_or_else(|| HarnessError::Internal("measurement span not sampled".into()))?;
        let slowdown = if vm.role == Role::Attacker {
            None
        } else {
            throughput(&baseline, t0, t_end, i).and_then(|(_, base)| ratio(base, tp))
        };
        // Monitoring cost is only attributable when monitoring is the sole
        // difference from the companion run, i.e. with no attacker present.
        let overhead = (defense_on && attackers.is_empty() && vm.role == Role::Benign)
            .then(|| throughput(undefended, t0, t_end, i))
            .flatten()
            .and_then(|(_, undef)| ratio(tp, undef).map(|kept| 1.0 - kept));
        vms.push(VmReport {
            vm_id: vm.vm_id.clone(),
            role: vm.role,
            completed_ops: ops,
            throughput_ops_per_ms: tp,
            slowdown,
            overhead,
        });
    }

    let detection = main.monitor.as_ref().map(|monitor| {
        let identified = monitor.identified.clone();
        let tp: Vec<String> =
            identified.iter().filter(|v| attackers.contains(v)).cloned().collect();
        let fp: Vec<String> =
            identified.iter().filter(|v| !attackers.contains(v)).cloned().collect();
        let fnn: Vec<String> =
            attackers.iter().filter(|v| !identified.contains(v)).cloned().collect();
        let i = protected_index.expect("defense validated a protected VM");
        let post_mitigation_slowdown = t_tail.and_then(|t| {
            let (_, defended) = throughput(&main, t, t_end, i)?;
            let (_, base) = throughput(&baseline, t, t_end, i)?;
            ratio(base, defended)
        });
        let unmitigated_slowdown = (!attackers.is_empty())
            .then(|| {
                let (_, undef) = throughput(undefended, t0, t_end, i)?;
                let (_, base) = throughput(&baseline, t0, t_end, i)?;
                ratio(base, undef)
            })
            .flatten();
        DetectionReport {
            suspected_ms,
            identified_ms,
            mitigated_ms,
            identified,
            ground_truth: attackers.clone(),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fnn,
            final_phase: monitor.phase,
            monitor_rounds: monitor.monitor_rounds,
            identification_rounds: monitor.identification_rounds,
            reference_refreshes: monitor.reference_refreshes,
            false_alarm_suppressions: monitor.false_alarm_suppressions,
            post_mitigation_slowdown,
            unmitigated_slowdown,
        }
    });

    let ks_series = events
        .iter()
        .filter_map(|e| match e {
            DetectionEvent::Decision { time_ms, statistic, critical, reject, .. }
            | DetectionEvent::SearchRound { time_ms, statistic, critical, reject, .. } => {
                Some(KsPoint {
                    time_ms: *time_ms,
                    statistic: *statistic,
                    critical: *critical,
                    reject: *reject,
                })
            }
            _ => None,
        })
        .collect();

    let records = assemble_records(config, &main, resolution.probe_records);

    Ok(Report {
        scenario: config.name.clone(),
        seed: config.seed,
        duration_ms: config.duration_ms,
        measured_from_ms: t0,
        measured_to_ms: t_end,
        vms,
        detection,
        ks_series,
        records,
    })
}

/// Merges probe results, counter snapshots, sample windows, and defense
/// events into one time-ordered record stream.
fn assemble_records(
    config: &ScenarioConfig,
    main: &RunOutcome,
    probe_records: Vec<TraceRecord>,
) -> Vec<TraceRecord> {
    let alpha = config.defense.schedule.alpha;
    let metric = config.defense.schedule.metric;
    let mut records = probe_records;

    for snapshot in &main.snapshots {
        for (i, vm) in config.vm.iter().enumerate() {
            records.push(TraceRecord {
                time_ms: snapshot.time_ms,
                kind: RecordKind::CounterSample,
                vm_id: Some(vm.vm_id.clone()),
                payload: json!({ "counters": snapshot.counters[i] }),
            });
        }
    }

    if let Some(monitor) = &main.monitor {
        let protected = config.protected_vm().map(|v| v.vm_id.clone());
        for window in &monitor.windows {
            records.push(TraceRecord {
                time_ms: window.collected_at_ms,
                kind: RecordKind::CounterSample,
                vm_id: protected.clone(),
                payload: json!({
                    "window": window.kind,
                    "metric": metric,
                    "values": window.values,
                }),
            });
        }
        for event in &monitor.events {
            let (time_ms, kind, vm_id, payload) = match event {
                DetectionEvent::Decision {
                    time_ms,
                    statistic,
                    critical,
                    reject,
                    consecutive,
                    reference_time_ms,
                } => (
                    *time_ms,
                    RecordKind::KsDecision,
                    protected.clone(),
                    json!({
                        "statistic": statistic,
                        "critical": critical,
                        "alpha": alpha,
                        "reject": reject,
                        "consecutive": consecutive,
                        "reference_time_ms": reference_time_ms,
                    }),
                ),
                DetectionEvent::SearchRound {
                    time_ms,
                    throttled,
                    statistic,
                    critical,
                    reject,
                    reference_time_ms,
                } => (
                    *time_ms,
                    RecordKind::KsDecision,
                    protected.clone(),
                    json!({
                        "statistic": statistic,
                        "critical": critical,
                        "alpha": alpha,
                        "reject": reject,
                        "reference_time_ms": reference_time_ms,
                        "search": true,
                        "throttled": throttled,
                    }),
                ),
                DetectionEvent::PhaseChange { time_ms, from, to } => (
                    *time_ms,
                    RecordKind::PhaseChange,
                    None,
                    json!({ "from": from, "to": to }),
                ),
                DetectionEvent::DutyChange { time_ms, vm, ratio } => (
                    *time_ms,
                    RecordKind::DutyChange,
                    Some(vm.clone()),
                    json!({ "ratio": ratio }),
                ),
                DetectionEvent::AttackerIdentified { time_ms, vm } => (
                    *time_ms,
                    RecordKind::PhaseChange,
                    Some(vm.clone()),
                    json!({ "identified": vm }),
                ),
                DetectionEvent::ReferenceRefresh { time_ms } => (
                    *time_ms,
                    RecordKind::CounterSample,
                    protected.clone(),
                    json!({ "reference_refresh": true }),
                ),
            };
            records.push(TraceRecord { time_ms, kind, vm_id, payload });
        }
    }

    records.sort_by(|a, b| a.time_ms.total_cmp(&b.time_ms));
    records
}
