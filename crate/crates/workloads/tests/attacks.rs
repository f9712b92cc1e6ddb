//! Attack workloads run against a live simulator, verified with the placement
//! oracle: cleansing really empties the LLC, targeted floods really stay on
//! their channels, and the adaptive cleanser really finds its victim.

use std::collections::HashSet;

use memsim_core::{
    build_topology, MemOp, Prober, PublicGeometry, ServicePath, Simulator, TopologyConfig,
};
use workloads::{
    adaptive_llc_cleanse, atomic_lock_workload, llc_cleanse_workload, mem_flood_workload,
    AtomicKind, ChannelPattern, EvictionBuffer, FloodMode,
};

fn desk_sim(seed: u64) -> Simulator {
    Simulator::new(build_topology(TopologyConfig::desk_scale(), seed).unwrap())
}

fn geometry(s: &Simulator) -> PublicGeometry {
    s.public_geometry()
}

/// Builds a perfect eviction buffer from the placement oracle: for every
/// (set, slice), the first `ways` region lines that land there.
fn oracle_buffer(s: &Simulator, region: (u64, u64)) -> EvictionBuffer {
    let topo = s.topology();
    let c = &topo.config;
    let mut buckets: Vec<Vec<Vec<u64>>> =
        vec![vec![Vec::new(); c.llc_slices as usize]; c.llc_sets_per_slice as usize];
    let (base, len) = region;
    let mut addr = base;
    while addr < base + len {
        let p = topo.resolve(addr).unwrap();
        let b = &mut buckets[p.set_index as usize][p.slice_index as usize];
        if b.len() < c.llc_ways as usize {
            b.push(addr);
        }
        addr += c.line_size;
    }
    EvictionBuffer::from_groups(buckets, c.llc_ways).unwrap()
}

fn bind_all(s: &mut Simulator, vm: &str, sources: Vec<Box<dyn memsim_core::OpSource>>) {
    for (vcpu, src) in sources.into_iter().enumerate() {
        s.bind_source(vm, vcpu as u32, src).unwrap();
    }
}

#[test]
fn full_cleanse_evicts_an_idle_victims_resident_lines() {
    let mut s = desk_sim(3);
    s.add_vm("victim", 1).unwrap();
    s.add_vm("attacker", 2).unwrap();
    let victim_lines: Vec<u64> = (0..64).map(|i| 0x8000 + i * 64).collect();
    for &a in &victim_lines {
        let t = s.submit("victim", 0, MemOp::read(a)).unwrap();
        s.run_until_ticket(t, 1_000_000).unwrap();
    }
    assert!(victim_lines.iter().all(|&a| s.llc_holds(a)));

    let region = (16 << 20, 8 << 20);
    let buffer = oracle_buffer(&s, region);
    assert!(buffer.covers(256, 4));
    let spec = llc_cleanse_workload(buffer, 2).unwrap();
    let g = geometry(&s);
    bind_all(&mut s, "attacker", spec.instantiate(region, &g, 0).unwrap());
    s.advance(2_500_000);

    for &a in &victim_lines {
        assert!(!s.llc_holds(a), "line {a:#x} survived a full cleanse pass");
        assert!(!s.private_holds("victim", 0, a), "private copy {a:#x} not back-invalidated");
    }
    let t = s.submit("victim", 0, MemOp::read(victim_lines[0])).unwrap();
    let c = s.run_until_ticket(t, 10_000_000).unwrap();
    assert!(c.latency() >= 190, "refetch came from cache: {}", c.latency());
}

#[test]
fn targeted_flood_traffic_stays_on_its_channels() {
    let mut s = desk_sim(9);
    s.add_vm("flood", 2).unwrap();
    let region = (32 << 20, 8 << 20);
    let pattern = ChannelPattern { bits: vec![13, 14], value: 0b10 };
    let expect = s.topology().resolve(pattern.apply(region.0)).unwrap().channel_index;
    let spec =
        mem_flood_workload(2, FloodMode::Targeted { patterns: vec![pattern] }).unwrap();
    let g = geometry(&s);
    bind_all(&mut s, "flood", spec.instantiate(region, &g, 0).unwrap());

    let fid = s.vm_id("flood").unwrap();
    let mut dram_ops = 0u64;
    for c in s.advance(200_000) {
        if c.vm != fid {
            continue;
        }
        assert!(matches!(c.path, ServicePath::DramBufferHit | ServicePath::DramBufferMiss));
        let placed = s.topology().resolve(c.op.address).unwrap();
        assert_eq!(placed.channel_index, expect, "op at {:#x} strayed", c.op.address);
        dram_ops += 1;
    }
    assert!(dram_ops > 500, "flood barely ran: {dram_ops} ops");
}

#[test]
fn eight_flood_threads_scale_nearly_linearly_on_eight_channels() {
    let region = (0u64, 320 << 20);
    let mut throughput = |threads: u32| {
        let mut s = Simulator::new(build_topology(TopologyConfig::default(), 1).unwrap());
        s.add_vm("flood", threads).unwrap();
        let spec = mem_flood_workload(threads, FloodMode::Full).unwrap();
        let g = geometry(&s);
        bind_all(&mut s, "flood", spec.instantiate(region, &g, 0).unwrap());
        s.advance(500_000);
        let before = s.read_counters("flood").unwrap().completed_ops;
        s.advance(4_000_000);
        s.read_counters("flood").unwrap().completed_ops - before
    };
    let one = throughput(1);
    let eight = throughput(8);
    let ratio = eight as f64 / one as f64;
    assert!((6.4..=9.6).contains(&ratio), "8-thread speedup {ratio:.2} outside 8 +/- 20%");
}

#[test]
fn aligned_atomics_never_lock_the_bus() {
    let victim_ops: Vec<MemOp> = (0..8).map(|i| MemOp::read(0x2000 + i * 64)).collect();
    let run = |with_attacker: bool| -> (u64, u64) {
        let mut s = desk_sim(5);
        s.add_vm("victim", 1).unwrap();
        s.add_vm("attacker", 1).unwrap();
        s.bind_source("victim", 0, Box::new(memsim_core::CyclicOps::new(victim_ops.clone())))
            .unwrap();
        if with_attacker {
            let spec = atomic_lock_workload(AtomicKind::AlignedControl);
            let g = geometry(&s);
            bind_all(&mut s, "attacker", spec.instantiate((16 << 20, 1 << 20), &g, 0).unwrap());
        }
        let locked = s
            .advance(200_000)
            .iter()
            .filter(|c| c.path == ServicePath::BusLocked)
            .count() as u64;
        (s.read_counters("victim").unwrap().completed_ops, locked)
    };
    let (solo, _) = run(false);
    let (contended, locked) = run(true);
    assert_eq!(locked, 0, "aligned atomics took the bus-lock path");
    assert!(
        contended as f64 >= 0.9 * solo as f64,
        "victim fell from {solo} to {contended} ops under the aligned control"
    );
}

#[test]
fn adaptive_cleanse_discovers_a_strided_victims_sets() {
    let mut s = desk_sim(21);
    s.add_vm("victim", 1).unwrap();
    s.add_vm("attacker", 1).unwrap();
    // Sixteen lines at 4 KB stride: four distinct LLC sets, re-touched every
    // few hundred cycles.
    let victim_lines: Vec<u64> = (0..16).map(|i| 0x10000 + i * 4096).collect();
    let true_sets: HashSet<u32> =
        victim_lines.iter().map(|&a| s.topology().resolve(a).unwrap().set_index).collect();
    s.bind_source(
        "victim",
        0,
        Box::new(memsim_core::CyclicOps::new(
            victim_lines.iter().map(|&a| MemOp::read(a)).collect(),
        )),
    )
    .unwrap();

    let region = (16 << 20, 8 << 20);
    let buffer = oracle_buffer(&s, region);
    let g = geometry(&s);
    let mut prober = Prober::new(&mut s, "attacker", 0, region).unwrap();
    let spec = adaptive_llc_cleanse(&mut prober, &buffer, 8, 1).unwrap();

    let found: HashSet<u32> = spec.victim_sets().expect("no sets discovered").iter().copied().collect();
    for set in &true_sets {
        assert!(found.contains(set), "missed victim set {set}");
    }
    assert!(
        found.len() <= 2 * true_sets.len(),
        "{} sets flagged for {} real ones",
        found.len(),
        true_sets.len()
    );

    // The minted attack touches only flagged sets.
    for src in spec.instantiate(region, &g, 0).unwrap().iter_mut() {
        for _ in 0..64 {
            if let memsim_core::Step::Op(op) = src.next(None) {
                let set = s.topology().resolve(op.address).unwrap().set_index;
                assert!(found.contains(&set), "attack op strayed to set {set}");
            }
        }
    }
}

#[test]
fn adaptive_cleanse_stays_idle_when_nobody_contends() {
    let mut s = desk_sim(22);
    s.add_vm("attacker", 1).unwrap();
    let region = (16 << 20, 8 << 20);
    let buffer = oracle_buffer(&s, region);
    let mut prober = Prober::new(&mut s, "attacker", 0, region).unwrap();
    let spec = adaptive_llc_cleanse(&mut prober, &buffer, 8, 1).unwrap();
    assert!(spec.is_idle(), "phantom conflicts against an idle machine");
}
