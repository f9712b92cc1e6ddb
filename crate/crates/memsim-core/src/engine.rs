//! The discrete-event simulator: one logical timeline over which vCPU-bound
//! workload streams, the cache hierarchy, the DRAM schedulers, the global bus
//! lock, and per-VM duty-cycle gating all advance deterministically.
//!
//! Everything is driven off a single binary heap of events ordered by
//! (time, kind rank, sequence number); the sequence number makes ties total,
//! so identical inputs replay identically.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use thiserror::Error;

use crate::cache::{Llc, SetAssocCache};
use crate::dram::{Bank, Channel, DramReq};
use crate::op::{Atomicity, Cacheability, Completion, MemOp, OpSource, ServicePath, Step, ATOMIC_OPERAND_BYTES};
use crate::topology::MemoryTopology;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("unknown VM `{0}`")]
    UnknownVm(String),
    #[error("VM `{0}` has no vCPU {1}")]
    UnknownVcpu(String, u32),
    #[error("duty ratio must be k/16 with k in [1,16], got {0}/16")]
    InvalidRatio(u8),
    #[error("invalid op: {0}")]
    InvalidOp(String),
    #[error("VM name `{0}` already exists")]
    DuplicateVm(String),
    #[error("ticket {0} did not complete within {1} cycles")]
    Timeout(u64, u64),
}

/// Cumulative per-VM performance counters (the PMU analog).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Counters {
    pub issued_ops: u64,
    pub completed_ops: u64,
    pub llc_accesses: u64,
    pub llc_misses: u64,
    pub dram_requests: u64,
    pub bytes_transferred: u64,
}

#[derive(Debug, Clone, Copy)]
enum EvKind {
    Complete { vm: u32, vcpu: u32, ticket: u64, op: MemOp, issued_at: u64, path: ServicePath },
    BusRelease,
    BankDispatch { bank: u32 },
    Issue { vm: u32, vcpu: u32 },
}

impl EvKind {
    fn rank(&self) -> u8 {
        match self {
            EvKind::Complete { .. } => 0,
            EvKind::BusRelease => 1,
            EvKind::BankDispatch { .. } => 2,
            EvKind::Issue { .. } => 3,
        }
    }
}

struct Ev {
    time: u64,
    rank: u8,
    seq: u64,
    kind: EvKind,
}

impl PartialEq for Ev {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.rank, self.seq) == (other.time, other.rank, other.seq)
    }
}
impl Eq for Ev {}
impl PartialOrd for Ev {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ev {
    // Reversed so the BinaryHeap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.rank, other.seq).cmp(&(self.time, self.rank, self.seq))
    }
}

struct Vcpu {
    private: SetAssocCache,
    source: Option<Box<dyn OpSource>>,
    last: Option<Completion>,
    busy: bool,
    issue_scheduled: bool,
    manual: VecDeque<(u64, MemOp)>,
}

struct Vm {
    name: String,
    vcpus: Vec<Vcpu>,
    duty_k: u8,
    duty_pending: Option<(u8, u64)>,
    counters: Counters,
}

#[derive(Debug, Clone, Copy)]
struct GatedOp {
    vm: u32,
    vcpu: u32,
    ticket: u64,
    op: MemOp,
    issued_at: u64,
}

pub struct Simulator {
    topo: MemoryTopology,
    clock: u64,
    seq: u64,
    next_ticket: u64,
    heap: BinaryHeap<Ev>,
    vms: Vec<Vm>,
    vm_index: BTreeMap<String, u32>,
    llc: Llc,
    banks: Vec<Bank>,
    channels: Vec<Channel>,
    /// Ops currently inside the LLC/DRAM portion of the hierarchy.
    in_flight: u64,
    bus_held_until: Option<u64>,
    atomic_wait: VecDeque<GatedOp>,
    parked: VecDeque<GatedOp>,
    completions: Vec<Completion>,
}

impl Simulator {
    pub fn new(topo: MemoryTopology) -> Self {
        let c = &topo.config;
        Simulator {
            llc: Llc::new(c.llc_slices, c.llc_sets_per_slice, c.llc_ways),
            banks: (0..c.banks).map(|_| Bank::default()).collect(),
            channels: (0..c.channels).map(|_| Channel::default()).collect(),
            topo,
            clock: 0,
            seq: 0,
            next_ticket: 0,
            heap: BinaryHeap::new(),
            vms: Vec::new(),
            vm_index: BTreeMap::new(),
            in_flight: 0,
            bus_held_until: None,
            atomic_wait: VecDeque::new(),
            parked: VecDeque::new(),
            completions: Vec::new(),
        }
    }

    pub fn topology(&self) -> &MemoryTopology {
        &self.topo
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn now_ms(&self) -> f64 {
        self.clock as f64 / self.topo.config.cycles_per_ms as f64
    }

    pub fn add_vm(&mut self, name: &str, vcpus: u32) -> Result<u32, SimError> {
        if self.vm_index.contains_key(name) {
            return Err(SimError::DuplicateVm(name.to_string()));
        }
        let c = &self.topo.config;
        let sets = c.private_sets();
        let id = self.vms.len() as u32;
        self.vms.push(Vm {
            name: name.to_string(),
            vcpus: (0..vcpus)
                .map(|_| Vcpu {
                    private: SetAssocCache::new(sets, c.private_ways),
                    source: None,
                    last: None,
                    busy: false,
                    issue_scheduled: false,
                    manual: VecDeque::new(),
                })
                .collect(),
            duty_k: 16,
            duty_pending: None,
            counters: Counters::default(),
        });
        self.vm_index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn vm_id(&self, name: &str) -> Result<u32, SimError> {
        self.vm_index.get(name).copied().ok_or_else(|| SimError::UnknownVm(name.to_string()))
    }

    pub fn vm_name(&self, id: u32) -> &str {
        &self.vms[id as usize].name
    }

    pub fn vm_names(&self) -> Vec<String> {
        self.vms.iter().map(|v| v.name.clone()).collect()
    }

    pub fn vcpu_count(&self, vm: &str) -> Result<u32, SimError> {
        Ok(self.vms[self.vm_id(vm)? as usize].vcpus.len() as u32)
    }

    fn check_vcpu(&self, vm: u32, vcpu: u32) -> Result<(), SimError> {
        let v = &self.vms[vm as usize];
        if vcpu as usize >= v.vcpus.len() {
            return Err(SimError::UnknownVcpu(v.name.clone(), vcpu));
        }
        Ok(())
    }

    /// Binds an autonomous workload stream to a vCPU; it starts issuing at the
    /// next duty window.
    pub fn bind_source(&mut self, vm: &str, vcpu: u32, source: Box<dyn OpSource>) -> Result<(), SimError> {
        let id = self.vm_id(vm)?;
        self.check_vcpu(id, vcpu)?;
        let v = &mut self.vms[id as usize].vcpus[vcpu as usize];
        v.source = Some(source);
        if !v.busy && !v.issue_scheduled {
            v.issue_scheduled = true;
            self.push(self.clock, EvKind::Issue { vm: id, vcpu });
        }
        Ok(())
    }

    pub fn unbind_source(&mut self, vm: &str, vcpu: u32) -> Result<(), SimError> {
        let id = self.vm_id(vm)?;
        self.check_vcpu(id, vcpu)?;
        self.vms[id as usize].vcpus[vcpu as usize].source = None;
        Ok(())
    }

    fn validate_op(&self, op: &MemOp) -> Result<(), SimError> {
        let line = self.topo.config.line_size;
        if op.address >= self.topo.config.mem_bytes {
            return Err(SimError::InvalidOp(format!(
                "address {:#x} outside physical range ({:#x})",
                op.address, self.topo.config.mem_bytes
            )));
        }
        match op.atomicity {
            Atomicity::Unaligned => {
                if op.cacheability != Cacheability::Cached {
                    return Err(SimError::InvalidOp("unaligned atomic must target cacheable memory".into()));
                }
                if op.address % line <= line - ATOMIC_OPERAND_BYTES {
                    return Err(SimError::InvalidOp(format!(
                        "unaligned atomic at {:#x} does not straddle a line boundary",
                        op.address
                    )));
                }
            }
            Atomicity::UncachedAtomic => {
                if op.cacheability != Cacheability::Uncached {
                    return Err(SimError::InvalidOp("uncached atomic must target uncacheable memory".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Queues one op on a vCPU with no bound stream (or ahead of it). The op
    /// issues at the next duty window.
    pub fn submit(&mut self, vm: &str, vcpu: u32, op: MemOp) -> Result<u64, SimError> {
        let id = self.vm_id(vm)?;
        self.check_vcpu(id, vcpu)?;
        self.validate_op(&op)?;
        let ticket = self.next_ticket;
        self.next_ticket += 1;
        let v = &mut self.vms[id as usize].vcpus[vcpu as usize];
        v.manual.push_back((ticket, op));
        if !v.busy && !v.issue_scheduled {
            v.issue_scheduled = true;
            self.push(self.clock, EvKind::Issue { vm: id, vcpu });
        }
        Ok(ticket)
    }

    pub fn set_duty_cycle(&mut self, vm: &str, k: u8) -> Result<(), SimError> {
        if !(1..=16).contains(&k) {
            return Err(SimError::InvalidRatio(k));
        }
        let id = self.vm_id(vm)? as usize;
        let frame = self.topo.config.duty_frame_cycles();
        // Fold a pending change whose boundary has already passed.
        if let Some((pk, at)) = self.vms[id].duty_pending {
            if self.clock >= at {
                self.vms[id].duty_k = pk;
            }
        }
        let boundary = (self.clock / frame + 1) * frame;
        self.vms[id].duty_pending = Some((k, boundary));
        Ok(())
    }

    /// The most recently requested duty ratio (the value a later restore
    /// should reinstate), regardless of whether its frame boundary has passed.
    pub fn duty_ratio(&self, vm: &str) -> Result<u8, SimError> {
        let id = self.vm_id(vm)? as usize;
        Ok(match self.vms[id].duty_pending {
            Some((k, _)) => k,
            None => self.vms[id].duty_k,
        })
    }

    pub fn read_counters(&self, vm: &str) -> Result<Counters, SimError> {
        Ok(self.vms[self.vm_id(vm)? as usize].counters)
    }

    fn effective_duty(&self, vm: u32, t: u64) -> u8 {
        let v = &self.vms[vm as usize];
        match v.duty_pending {
            Some((k, at)) if t >= at => k,
            _ => v.duty_k,
        }
    }

    fn duty_active(&self, vm: u32, t: u64) -> bool {
        let k = self.effective_duty(vm, t) as u64;
        let w = self.topo.config.duty_window_cycles;
        (t % (16 * w)) / w < k
    }

    fn next_active_time(&self, vm: u32, t: u64) -> u64 {
        if self.duty_active(vm, t) {
            t
        } else {
            let frame = self.topo.config.duty_frame_cycles();
            (t / frame + 1) * frame
        }
    }

    fn push(&mut self, time: u64, kind: EvKind) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Ev { time, rank: kind.rank(), seq, kind });
    }

    /// Advances simulated time, processing every event in (now, now+cycles]
    /// and returning the completions that occurred.
    pub fn advance(&mut self, cycles: u64) -> Vec<Completion> {
        let target = self.clock + cycles;
        while let Some(ev) = self.heap.peek() {
            if ev.time > target {
                break;
            }
            let ev = self.heap.pop().unwrap();
            debug_assert!(ev.time >= self.clock, "event time went backwards");
            self.clock = ev.time;
            self.dispatch(ev.kind);
        }
        self.clock = target;
        std::mem::take(&mut self.completions)
    }

    /// Runs until the given ticket completes (the synchronous probe path).
    pub fn run_until_ticket(&mut self, ticket: u64, max_cycles: u64) -> Result<Completion, SimError> {
        let deadline = self.clock + max_cycles;
        loop {
            let Some(ev) = self.heap.peek() else {
                return Err(SimError::Timeout(ticket, max_cycles));
            };
            if ev.time > deadline {
                return Err(SimError::Timeout(ticket, max_cycles));
            }
            let ev = self.heap.pop().unwrap();
            self.clock = ev.time;
            self.dispatch(ev.kind);
            if let Some(c) = self.completions.iter().rev().find(|c| c.ticket == ticket) {
                let c = *c;
                self.completions.clear();
                return Ok(c);
            }
        }
    }

    fn dispatch(&mut self, kind: EvKind) {
        match kind {
            EvKind::Issue { vm, vcpu } => self.on_issue(vm, vcpu),
            EvKind::Complete { vm, vcpu, ticket, op, issued_at, path } => {
                self.on_complete(vm, vcpu, ticket, op, issued_at, path)
            }
            EvKind::BankDispatch { bank } => self.on_bank_dispatch(bank),
            EvKind::BusRelease => self.on_bus_release(),
        }
    }

    fn on_issue(&mut self, vm: u32, vcpu: u32) {
        let t = self.clock;
        {
            let v = &mut self.vms[vm as usize].vcpus[vcpu as usize];
            v.issue_scheduled = false;
            if v.busy {
                return;
            }
        }
        if !self.duty_active(vm, t) {
            let at = self.next_active_time(vm, t);
            let v = &mut self.vms[vm as usize].vcpus[vcpu as usize];
            v.issue_scheduled = true;
            self.push(at, EvKind::Issue { vm, vcpu });
            return;
        }
        // Manual queue first, then the bound stream.
        let manual = self.vms[vm as usize].vcpus[vcpu as usize].manual.pop_front();
        if let Some((ticket, op)) = manual {
            self.start_op(vm, vcpu, ticket, op, t);
            return;
        }
        let step = {
            let v = &mut self.vms[vm as usize].vcpus[vcpu as usize];
            let Some(src) = v.source.as_mut() else { return };
            src.next(v.last.as_ref())
        };
        match step {
            Step::Op(op) => {
                debug_assert!(self.validate_op(&op).is_ok(), "bound stream produced invalid op");
                let ticket = self.next_ticket;
                self.next_ticket += 1;
                self.start_op(vm, vcpu, ticket, op, t);
            }
            Step::Idle(d) => {
                let v = &mut self.vms[vm as usize].vcpus[vcpu as usize];
                v.issue_scheduled = true;
                self.push(t + d.max(1), EvKind::Issue { vm, vcpu });
            }
        }
    }

    fn start_op(&mut self, vm: u32, vcpu: u32, ticket: u64, op: MemOp, t: u64) {
        self.vms[vm as usize].counters.issued_ops += 1;
        self.vms[vm as usize].vcpus[vcpu as usize].busy = true;
        let gated = GatedOp { vm, vcpu, ticket, op, issued_at: t };
        if op.is_exotic_atomic() {
            self.atomic_wait.push_back(gated);
            self.try_acquire_bus(t);
            return;
        }
        self.route_memory(gated, t);
    }

    /// Routes a non-exotic op: private cache, then (past the bus gate) the
    /// LLC and DRAM.
    fn route_memory(&mut self, g: GatedOp, t: u64) {
        let line = self.topo.line_addr(g.op.address);
        if g.op.cacheability == Cacheability::Cached {
            let hit = self.vms[g.vm as usize].vcpus[g.vcpu as usize].private.lookup_touch(line);
            if hit {
                self.push(
                    t + self.topo.config.lat.private_hit,
                    EvKind::Complete {
                        vm: g.vm,
                        vcpu: g.vcpu,
                        ticket: g.ticket,
                        op: g.op,
                        issued_at: g.issued_at,
                        path: ServicePath::PrivateHit,
                    },
                );
                return;
            }
            if self.bus_gated() {
                self.parked.push_back(g);
                return;
            }
            self.enter_llc(g, t);
        } else {
            if self.bus_gated() {
                self.parked.push_back(g);
                return;
            }
            self.enter_dram(g, t, false);
        }
    }

    fn bus_gated(&self) -> bool {
        self.bus_held_until.is_some() || !self.atomic_wait.is_empty()
    }

    fn enter_llc(&mut self, g: GatedOp, t: u64) {
        self.in_flight += 1;
        let counters = &mut self.vms[g.vm as usize].counters;
        counters.llc_accesses += 1;
        let line = self.topo.line_addr(g.op.address);
        let (slice, set) = (self.topo.slice_of(g.op.address), self.topo.set_of(g.op.address));
        if self.llc.lookup_touch(slice, set, line) {
            // Fill the private cache; its own eviction is silent (the line
            // stays resident in the inclusive LLC).
            self.vms[g.vm as usize].vcpus[g.vcpu as usize].private.insert(line);
            self.push(
                t + self.topo.config.lat.llc_hit,
                EvKind::Complete {
                    vm: g.vm,
                    vcpu: g.vcpu,
                    ticket: g.ticket,
                    op: g.op,
                    issued_at: g.issued_at,
                    path: ServicePath::LlcHit,
                },
            );
            return;
        }
        self.vms[g.vm as usize].counters.llc_misses += 1;
        let arrival = t + self.topo.config.lat.llc_hit;
        self.enter_dram(g, arrival, true);
    }

    fn enter_dram(&mut self, g: GatedOp, arrival: u64, from_llc: bool) {
        if !from_llc {
            self.in_flight += 1;
        }
        self.vms[g.vm as usize].counters.dram_requests += 1;
        let bank = self.topo.bank_of(g.op.address);
        let req = DramReq {
            ticket: g.ticket,
            vm: g.vm,
            vcpu: g.vcpu,
            op: g.op,
            row: self.topo.row_of(g.op.address),
            channel: self.topo.channel_of(g.op.address),
            arrival,
            seq: self.seq,
            issued_at: g.issued_at,
        };
        let b = &mut self.banks[bank as usize];
        b.pending.push(req);
        let at = arrival.max(b.free_at);
        self.push(at, EvKind::BankDispatch { bank });
    }

    fn on_bank_dispatch(&mut self, bank: u32) {
        let t = self.clock;
        let free_at = self.banks[bank as usize].free_at;
        if free_at > t {
            if !self.banks[bank as usize].pending.is_empty() {
                self.push(free_at, EvKind::BankDispatch { bank });
            }
            return;
        }
        // Requests that arrive later carry their own dispatch events.
        let Some(req) = self.banks[bank as usize].pick(t) else { return };
        let cfg = &self.topo.config;
        let row_hit = self.banks[bank as usize].open_row == Some(req.row);
        let waiting = self.banks[bank as usize].pending.len() as u64;
        let penalty = cfg.lat.queued_request_delay * waiting;
        let row_lat = if row_hit { cfg.lat.dram_buffer_hit } else { cfg.lat.dram_buffer_miss };
        let (bank_service, channel_service) = (cfg.bank_service, cfg.channel_service);

        self.banks[bank as usize].open_row = Some(req.row);
        self.banks[bank as usize].free_at = t + bank_service;

        let ch = &mut self.channels[req.channel as usize];
        let t2 = t.max(ch.free_at);
        ch.free_at = t2 + channel_service;

        self.push(
            t2 + row_lat + penalty,
            EvKind::Complete {
                vm: req.vm,
                vcpu: req.vcpu,
                ticket: req.ticket,
                op: req.op,
                issued_at: req.issued_at,
                path: if row_hit { ServicePath::DramBufferHit } else { ServicePath::DramBufferMiss },
            },
        );
        if !self.banks[bank as usize].pending.is_empty() {
            let at = self.banks[bank as usize].free_at;
            self.push(at, EvKind::BankDispatch { bank });
        }
    }

    fn on_complete(&mut self, vm: u32, vcpu: u32, ticket: u64, op: MemOp, issued_at: u64, path: ServicePath) {
        let t = self.clock;
        match path {
            ServicePath::LlcHit => self.in_flight -= 1,
            ServicePath::DramBufferHit | ServicePath::DramBufferMiss => {
                self.in_flight -= 1;
                let line_size = self.topo.config.line_size;
                self.vms[vm as usize].counters.bytes_transferred += line_size;
                // A cached op that went to DRAM arrived via an LLC miss:
                // fill both cache levels now.
                if op.cacheability == Cacheability::Cached {
                    self.fill_line(vm, vcpu, op.address);
                }
            }
            ServicePath::PrivateHit | ServicePath::BusLocked => {}
        }
        let completion = Completion { ticket, vm, vcpu, op, issued_at, completed_at: t, path };
        {
            let v = &mut self.vms[vm as usize];
            v.counters.completed_ops += 1;
            let vc = &mut v.vcpus[vcpu as usize];
            vc.busy = false;
            vc.last = Some(completion);
        }
        self.completions.push(completion);
        if self.in_flight == 0 {
            self.try_acquire_bus(t);
        }
        let v = &mut self.vms[vm as usize].vcpus[vcpu as usize];
        if (v.source.is_some() || !v.manual.is_empty()) && !v.issue_scheduled {
            v.issue_scheduled = true;
            self.push(t, EvKind::Issue { vm, vcpu });
        }
    }

    /// Inserts a freshly fetched line into the LLC and the requesting private
    /// cache; an LLC eviction back-invalidates every private cache.
    fn fill_line(&mut self, vm: u32, vcpu: u32, address: u64) {
        let line = self.topo.line_addr(address);
        let (slice, set) = (self.topo.slice_of(address), self.topo.set_of(address));
        if let Some(evicted) = self.llc.insert(slice, set, line) {
            for v in &mut self.vms {
                for vc in &mut v.vcpus {
                    vc.private.remove(evicted);
                }
            }
        }
        self.vms[vm as usize].vcpus[vcpu as usize].private.insert(line);
    }

    fn try_acquire_bus(&mut self, t: u64) {
        if self.bus_held_until.is_some() || self.in_flight > 0 {
            return;
        }
        let Some(head) = self.atomic_wait.pop_front() else { return };
        let release = t + self.topo.config.lat.lock_stall;
        self.bus_held_until = Some(release);
        self.push(release, EvKind::BusRelease);
        self.push(
            release,
            EvKind::Complete {
                vm: head.vm,
                vcpu: head.vcpu,
                ticket: head.ticket,
                op: head.op,
                issued_at: head.issued_at,
                path: ServicePath::BusLocked,
            },
        );
    }

    fn on_bus_release(&mut self) {
        let t = self.clock;
        self.bus_held_until = None;
        // Parked traffic re-enters the hierarchy past the gate, ahead of any
        // waiting atomic: the next acquisition happens only once these have
        // drained, so victims make progress between back-to-back locks.
        let parked = std::mem::take(&mut self.parked);
        for g in parked {
            if g.op.cacheability == Cacheability::Cached {
                self.enter_llc(g, t);
            } else {
                self.enter_dram(g, t, false);
            }
        }
        self.try_acquire_bus(t);
    }

    /// LLC-state inspection for tests.
    #[cfg(feature = "oracle")]
    pub fn llc_holds(&self, address: u64) -> bool {
        let line = self.topo.line_addr(address);
        self.llc.contains(self.topo.slice_of(address), self.topo.set_of(address), line)
    }

    /// Private-cache inspection for tests.
    #[cfg(feature = "oracle")]
    pub fn private_holds(&self, vm: &str, vcpu: u32, address: u64) -> bool {
        let id = self.vm_index[vm] as usize;
        self.vms[id].vcpus[vcpu as usize].private.contains(self.topo.line_addr(address))
    }
}
