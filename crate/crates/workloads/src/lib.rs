//! Tenant workload generators: benign streaming services plus the three
//! contention attacks (LLC cleansing, exotic-atomic bus locking, memory
//! flooding), all minted as deterministic per-vCPU op streams.

mod buffer;
mod spec;
mod streams;

use thiserror::Error;

pub use buffer::{ChannelPattern, EvictionBuffer};
pub use spec::{
    adaptive_llc_cleanse, atomic_lock_workload, idle_workload, llc_cleanse_workload,
    mem_flood_workload, stream_workload, stream_workload_ext, AtomicKind, FloodMode, Locality,
    Pulse, WorkloadSpec,
};
pub use streams::{BlockReadLoop, DelayedSource, IdleSource, PulsedOps, SeqReadLoop};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("footprint {footprint} bytes is below the minimum of {min}")]
    FootprintTooSmall { footprint: u64, min: u64 },
    #[error("workload needs {need} bytes but the region holds {have}")]
    RegionTooSmall { need: u64, have: u64 },
    #[error("eviction buffer is unusable: {0}")]
    IncompleteBuffer(String),
    #[error("targeted flood needs at least one channel pattern")]
    EmptyChannelSet,
    #[error("workload needs at least one thread")]
    ZeroThreads,
    #[error("stride must be at least one line")]
    ZeroStride,
    #[error("{threads} threads exceed the {limit} divisible work units")]
    TooManyThreads { threads: u32, limit: u32 },
    #[error("adaptive discovery failed: {0}")]
    Discovery(String),
}
