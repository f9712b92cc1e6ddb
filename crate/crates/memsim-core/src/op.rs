//! Memory operations and the streams that produce them.

use serde::{Deserialize, Serialize};

/// Operand width of the modeled locked read-modify-write (a 32-bit add).
/// An access is line-straddling when its offset leaves fewer than this many
/// bytes before the line boundary.
pub const ATOMIC_OPERAND_BYTES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cacheability {
    Cached,
    Uncached,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Atomicity {
    None,
    /// Locked access within one cache line: the line is locked, not the bus.
    Aligned,
    /// Locked access straddling a line boundary: locks the bus.
    Unaligned,
    /// Locked access to an uncacheable address: locks the bus.
    UncachedAtomic,
}

/// One memory operation as issued by a vCPU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemOp {
    pub address: u64,
    pub kind: OpKind,
    pub cacheability: Cacheability,
    pub atomicity: Atomicity,
}

impl MemOp {
    pub fn read(address: u64) -> Self {
        MemOp { address, kind: OpKind::Read, cacheability: Cacheability::Cached, atomicity: Atomicity::None }
    }

    pub fn write(address: u64) -> Self {
        MemOp { address, kind: OpKind::Write, cacheability: Cacheability::Cached, atomicity: Atomicity::None }
    }

    pub fn uncached_read(address: u64) -> Self {
        MemOp { address, kind: OpKind::Read, cacheability: Cacheability::Uncached, atomicity: Atomicity::None }
    }

    pub fn aligned_atomic(address: u64) -> Self {
        MemOp { address, kind: OpKind::Write, cacheability: Cacheability::Cached, atomicity: Atomicity::Aligned }
    }

    pub fn unaligned_atomic(address: u64) -> Self {
        MemOp { address, kind: OpKind::Write, cacheability: Cacheability::Cached, atomicity: Atomicity::Unaligned }
    }

    pub fn uncached_atomic(address: u64) -> Self {
        MemOp { address, kind: OpKind::Write, cacheability: Cacheability::Uncached, atomicity: Atomicity::UncachedAtomic }
    }

    /// Whether this op must acquire the global bus lock.
    pub fn is_exotic_atomic(&self) -> bool {
        matches!(self.atomicity, Atomicity::Unaligned | Atomicity::UncachedAtomic)
    }
}

/// How a completed op was served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServicePath {
    PrivateHit,
    LlcHit,
    DramBufferHit,
    DramBufferMiss,
    BusLocked,
}

/// Record of one finished memory operation.
#[derive(Debug, Clone, Copy)]
pub struct Completion {
    pub ticket: u64,
    pub vm: u32,
    pub vcpu: u32,
    pub op: MemOp,
    pub issued_at: u64,
    pub completed_at: u64,
    pub path: ServicePath,
}

impl Completion {
    pub fn latency(&self) -> u64 {
        self.completed_at - self.issued_at
    }
}

/// One step of a workload stream.
pub enum Step {
    Op(MemOp),
    /// Stay idle for the given number of cycles before the next step.
    Idle(u64),
}

/// An infinite per-vCPU stream of memory operations. `last` carries the most
/// recent completion on this vCPU, which is what adaptive attack loops key on.
pub trait OpSource {
    fn next(&mut self, last: Option<&Completion>) -> Step;
}

/// Loops over a fixed op sequence forever; the building block for probe
/// helper threads.
pub struct CyclicOps {
    ops: Vec<MemOp>,
    at: usize,
}

impl CyclicOps {
    pub fn new(ops: Vec<MemOp>) -> Self {
        assert!(!ops.is_empty(), "cyclic stream needs at least one op");
        CyclicOps { ops, at: 0 }
    }
}

impl OpSource for CyclicOps {
    fn next(&mut self, _last: Option<&Completion>) -> Step {
        let op = self.ops[self.at];
        self.at = (self.at + 1) % self.ops.len();
        Step::Op(op)
    }
}
