//! Deterministic discrete-event model of one physical server's memory system:
//! a sliced inclusive LLC over per-vCPU private caches, banked DRAM behind
//! FR-FCFS bank schedulers and FCFS channels, a global bus lock for exotic
//! atomic operations, and per-VM duty-cycle execution gating.
//!
//! The model exists to let multi-tenant memory contention — and attacks that
//! weaponize it — be reproduced, detected, and mitigated entirely in
//! simulation. Addresses map to (slice, bank, channel) through seeded hidden
//! functions; attack-side code only ever observes latencies through
//! [`AccessInterface`], while tests may check ground truth through the
//! `oracle` feature.

mod cache;
mod dram;
mod engine;
mod op;
mod probe;
mod topology;

pub use engine::{Counters, SimError, Simulator};
pub use op::{
    Atomicity, Cacheability, Completion, CyclicOps, MemOp, OpKind, OpSource, ServicePath, Step,
    ATOMIC_OPERAND_BYTES,
};
pub use probe::{AccessInterface, Prober, PublicGeometry};
pub use topology::{build_topology, ConfigError, LatencyTable, MemoryTopology, PlacementInfo, TopologyConfig};
