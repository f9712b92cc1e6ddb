//! The timing-only view of the machine handed to attack-side code.
//!
//! Reverse-engineering procedures and adaptive attack loops see exactly what a
//! guest sees: a contiguous allocation, datasheet geometry, and per-access
//! latencies. The hidden address mappings stay on the other side of this
//! trait — nothing here can reach `resolve()`.

use crate::engine::{SimError, Simulator};
use crate::op::{CyclicOps, MemOp};

/// Geometry an attacker can read off a datasheet. Bit positions and the slice
/// hash are deliberately absent.
#[derive(Debug, Clone, Copy)]
pub struct PublicGeometry {
    pub line_size: u64,
    pub llc_slices: u32,
    pub llc_ways: u32,
    pub llc_sets_per_slice: u32,
    pub private_cache_bytes: u64,
    pub private_ways: u32,
    pub channels: u32,
    pub banks: u32,
    pub cycles_per_ms: u64,
}

impl Simulator {
    /// The datasheet view of this machine, as handed to guest workloads.
    pub fn public_geometry(&self) -> PublicGeometry {
        let c = &self.topology().config;
        PublicGeometry {
            line_size: c.line_size,
            llc_slices: c.llc_slices,
            llc_ways: c.llc_ways,
            llc_sets_per_slice: c.llc_sets_per_slice,
            private_cache_bytes: c.private_cache_bytes,
            private_ways: c.private_ways,
            channels: c.channels,
            banks: c.banks,
            cycles_per_ms: c.cycles_per_ms,
        }
    }
}

/// Synchronous, timing-only memory access on behalf of one VM.
pub trait AccessInterface {
    fn geometry(&self) -> PublicGeometry;
    /// The VM's contiguous physical allocation (base, length).
    fn region(&self) -> (u64, u64);
    fn now(&self) -> u64;
    /// Issues one op and drives the simulation until it completes, returning
    /// its latency in cycles. Other tenants keep running meanwhile.
    fn access(&mut self, op: MemOp) -> Result<u64, SimError>;
    /// Binds an endless cyclic loop over `ops` to another vCPU of the same VM
    /// (the concurrent helper thread of two-thread probes).
    fn set_background_loop(&mut self, vcpu: u32, ops: Vec<MemOp>) -> Result<(), SimError>;
    fn clear_background(&mut self, vcpu: u32) -> Result<(), SimError>;
}

/// `AccessInterface` over a live simulator, probing from one vCPU of one VM.
pub struct Prober<'a> {
    sim: &'a mut Simulator,
    vm: String,
    vcpu: u32,
    region: (u64, u64),
    /// Per-access watchdog; generous because a probe may sit behind a bus
    /// lock storm or a throttled duty cycle.
    pub max_wait_cycles: u64,
}

impl<'a> Prober<'a> {
    pub fn new(sim: &'a mut Simulator, vm: &str, vcpu: u32, region: (u64, u64)) -> Result<Self, SimError> {
        sim.vm_id(vm)?;
        Ok(Prober { sim, vm: vm.to_string(), vcpu, region, max_wait_cycles: 50_000_000 })
    }

    pub fn sim(&mut self) -> &mut Simulator {
        self.sim
    }
}

impl<'a> AccessInterface for Prober<'a> {
    fn geometry(&self) -> PublicGeometry {
        self.sim.public_geometry()
    }

    fn region(&self) -> (u64, u64) {
        self.region
    }

    fn now(&self) -> u64 {
        self.sim.clock()
    }

    fn access(&mut self, op: MemOp) -> Result<u64, SimError> {
        let ticket = self.sim.submit(&self.vm, self.vcpu, op)?;
        let completion = self.sim.run_until_ticket(ticket, self.max_wait_cycles)?;
        Ok(completion.latency())
    }

    fn set_background_loop(&mut self, vcpu: u32, ops: Vec<MemOp>) -> Result<(), SimError> {
        self.sim.bind_source(&self.vm, vcpu, Box::new(CyclicOps::new(ops)))
    }

    fn clear_background(&mut self, vcpu: u32) -> Result<(), SimError> {
        self.sim.unbind_source(&self.vm, vcpu)
    }
}
