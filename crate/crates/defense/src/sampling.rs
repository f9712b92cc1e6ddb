use ks_stats::{SampleWindow, WindowKind};
use memsim_core::Simulator;

use crate::{DefenseError, MonitorMetric, MonitorSchedule};

/// Runs the clock to the next duty-frame boundary, where any scheduled
/// duty-cycle change comes into force.
pub(crate) fn advance_to_frame_boundary(sim: &mut Simulator) {
    let frame = sim.topology().config.duty_frame_cycles();
    let target = (sim.clock() / frame + 1) * frame;
    sim.advance(target - sim.clock());
}

/// Idles for the schedule's settle time, letting cache and bank state relax
/// into the steady state implied by the current duty ratios.
pub(crate) fn settle(sim: &mut Simulator, schedule: &MonitorSchedule) {
    sim.advance(schedule.settle_ms() * sim.topology().config.cycles_per_ms);
}

fn read_metric(sim: &Simulator, vm: &str, metric: MonitorMetric) -> Result<u64, DefenseError> {
    let c = sim.read_counters(vm)?;
    Ok(match metric {
        MonitorMetric::LlcAccesses => c.llc_accesses,
        MonitorMetric::BytesTransferred => c.bytes_transferred,
    })
}

/// Slices `window_ms` into `sub_windows` equal pieces and records the
/// protected VM's counter delta over each one.
fn sample_sub_windows(
    sim: &mut Simulator,
    protected: &str,
    window_ms: u64,
    sub_windows: u32,
    metric: MonitorMetric,
) -> Result<Vec<f64>, DefenseError> {
    let cycles_per_ms = sim.topology().config.cycles_per_ms;
    let sub_cycles = (window_ms / u64::from(sub_windows)) * cycles_per_ms;
    let mut values = Vec::with_capacity(sub_windows as usize);
    let mut last = read_metric(sim, protected, metric)?;
    for _ in 0..sub_windows {
        sim.advance(sub_cycles);
        let now = read_metric(sim, protected, metric)?;
        values.push((now - last) as f64);
        last = now;
    }
    Ok(values)
}

/// Samples the protected VM with every co-tenant throttled to the reference
/// ratio, approximating how it behaves alone on the machine. Co-tenant duty
/// ratios are restored and back in force before this returns; the protected
/// VM's own duty is never touched.
///
/// `settle_ms` idles between the throttle taking force and the first
/// sub-window: cache pollution left by a storage-based aggressor drains at
/// the throttled rate, so a window collected right away would still carry
/// its signature. Zero is fine when the machine is believed quiet; the
/// settled form costs co-tenants extra throttled time, so it is reserved
/// for moments that need a trustworthy reference.
pub fn collect_reference(
    sim: &mut Simulator,
    schedule: &MonitorSchedule,
    protected: &str,
    settle_ms: u64,
) -> Result<SampleWindow, DefenseError> {
    let co_vms: Vec<String> = sim.vm_names().into_iter().filter(|v| v != protected).collect();
    let mut saved = Vec::with_capacity(co_vms.len());
    for vm in &co_vms {
        saved.push((vm.clone(), sim.duty_ratio(vm)?));
        sim.set_duty_cycle(vm, schedule.reference_throttle)?;
    }
    advance_to_frame_boundary(sim);
    sim.advance(settle_ms * sim.topology().config.cycles_per_ms);
    let values = sample_sub_windows(
        sim,
        protected,
        schedule.reference_window_ms,
        schedule.sub_windows,
        schedule.metric,
    )?;
    let collected_at = sim.now_ms();
    for (vm, k) in &saved {
        sim.set_duty_cycle(vm, *k)?;
    }
    advance_to_frame_boundary(sim);
    Ok(SampleWindow::new(values, WindowKind::Reference, collected_at)?)
}

/// Samples the protected VM under whatever contention currently exists.
pub fn collect_monitored(
    sim: &mut Simulator,
    schedule: &MonitorSchedule,
    protected: &str,
) -> Result<SampleWindow, DefenseError> {
    let values = sample_sub_windows(
        sim,
        protected,
        schedule.monitor_window_ms,
        schedule.sub_windows,
        schedule.metric,
    )?;
    Ok(SampleWindow::new(values, WindowKind::Monitored, sim.now_ms())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use memsim_core::{build_topology, TopologyConfig};

    fn sim_with(vms: &[(&str, u32)]) -> Simulator {
        let mut s = Simulator::new(build_topology(TopologyConfig::desk_scale(), 1).unwrap());
        for (name, vcpus) in vms {
            s.add_vm(name, *vcpus).unwrap();
        }
        s
    }

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

    #[test]
    fn boundary_wait_lands_exactly_on_a_frame_edge() {
        let mut s = sim_with(&[]);
        let frame = s.topology().config.duty_frame_cycles();
        s.advance(frame / 3);
        advance_to_frame_boundary(&mut s);
        assert_eq!(s.clock(), frame);
        advance_to_frame_boundary(&mut s);
        assert_eq!(s.clock(), 2 * frame);
    }

    #[test]
    fn reference_collection_restores_co_tenant_ratios_and_spares_the_protected() {
        let mut s = sim_with(&[("prot", 1), ("a", 1), ("b", 1)]);
        s.set_duty_cycle("a", 8).unwrap();
        let w = collect_reference(&mut s, &frame_schedule(), "prot", 0).unwrap();
        assert_eq!(w.kind, WindowKind::Reference);
        assert_eq!(w.len(), 16);
        assert_eq!(s.duty_ratio("a").unwrap(), 8);
        assert_eq!(s.duty_ratio("b").unwrap(), 16);
        assert_eq!(s.duty_ratio("prot").unwrap(), 16);
    }

    #[test]
    fn monitored_window_has_one_delta_per_sub_window() {
        let mut s = sim_with(&[("prot", 1)]);
        let before = s.clock();
        let w = collect_monitored(&mut s, &frame_schedule(), "prot").unwrap();
        assert_eq!(w.kind, WindowKind::Monitored);
        assert_eq!(w.len(), 16);
        assert!(w.values.iter().all(|v| *v == 0.0));
        let cycles_per_ms = s.topology().config.cycles_per_ms;
        assert_eq!(s.clock() - before, 160 * cycles_per_ms);
    }
}
