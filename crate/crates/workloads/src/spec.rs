//! Workload definitions and the builders that produce them.
//!
//! A [`WorkloadSpec`] is a fully parameterized program description; minting
//! actual per-vCPU op streams happens in [`WorkloadSpec::instantiate`], which
//! pins every generated address inside the VM's allocation.

use memsim_core::{AccessInterface, MemOp, OpSource, PublicGeometry};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::{ChannelPattern, EvictionBuffer};
use crate::streams::{BlockReadLoop, IdleSource, PulsedOps};
use crate::WorkloadError;

/// Stripe width for full-mode flooding: one DRAM row, so each stream hops
/// rows as rarely as possible while successive stripes land on different
/// banks and channels.
const FLOOD_STRIPE_BYTES: u64 = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Locality {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomicKind {
    Unaligned,
    Uncached,
    /// Aligned cached atomic: locks the line, not the bus. The do-nothing
    /// control for bus-lock experiments.
    AlignedControl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FloodMode {
    Full,
    Targeted { patterns: Vec<ChannelPattern> },
}

/// On/off rhythm for a phased victim: `burst_ops` ops, then `gap_cycles` of
/// think time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pulse {
    pub burst_ops: u64,
    pub gap_cycles: u64,
}

#[derive(Debug, Clone)]
enum Kind {
    Idle,
    Stream { footprint: u64, locality: Locality, stride_lines: u64, pulse: Option<Pulse> },
    LlcCleanse { buffer: EvictionBuffer },
    /// Cleansing restricted to discovered victim sets, with the conflicting
    /// groups already selected.
    FocusedCleanse { victim_sets: Vec<u32>, addresses: Vec<Vec<u64>> },
    AtomicLock { kind: AtomicKind },
    MemFlood { mode: FloodMode },
}

/// A parameterized workload, ready to mint one op stream per thread.
#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    kind: Kind,
    threads: u32,
}

/// Paired read/write streaming over two `footprint/2` buffers: sequential
/// line order when locality is high, one seeded whole-pass permutation when
/// low.
pub fn stream_workload(footprint: u64, locality: Locality) -> Result<WorkloadSpec, WorkloadError> {
    stream_workload_ext(footprint, locality, 1, None)
}

/// [`stream_workload`] plus a line stride (sparse working sets) and an
/// optional burst/think pulse (phased services).
pub fn stream_workload_ext(
    footprint: u64,
    locality: Locality,
    stride_lines: u64,
    pulse: Option<Pulse>,
) -> Result<WorkloadSpec, WorkloadError> {
    if footprint < 128 {
        return Err(WorkloadError::FootprintTooSmall { footprint, min: 128 });
    }
    if stride_lines == 0 {
        return Err(WorkloadError::ZeroStride);
    }
    Ok(WorkloadSpec {
        kind: Kind::Stream { footprint, locality, stride_lines, pulse },
        threads: 1,
    })
}

/// Whole-LLC cleansing: `threads` streams, each looping over a disjoint
/// contiguous range of sets, touching one address per buffer line.
pub fn llc_cleanse_workload(
    buffer: EvictionBuffer,
    threads: u32,
) -> Result<WorkloadSpec, WorkloadError> {
    if threads == 0 {
        return Err(WorkloadError::ZeroThreads);
    }
    if threads > buffer.sets() {
        return Err(WorkloadError::TooManyThreads { threads, limit: buffer.sets() });
    }
    Ok(WorkloadSpec { kind: Kind::LlcCleanse { buffer }, threads })
}

/// An endless stream of bus-locking atomics (or the aligned control).
pub fn atomic_lock_workload(kind: AtomicKind) -> WorkloadSpec {
    WorkloadSpec { kind: Kind::AtomicLock { kind }, threads: 1 }
}

/// Memory flooding: full mode streams sequentially over a buffer 20x the LLC
/// size; targeted mode sends uncached traffic only to addresses matching the
/// given channel bit patterns.
pub fn mem_flood_workload(threads: u32, mode: FloodMode) -> Result<WorkloadSpec, WorkloadError> {
    if threads == 0 {
        return Err(WorkloadError::ZeroThreads);
    }
    if let FloodMode::Targeted { patterns } = &mode {
        if patterns.is_empty() {
            return Err(WorkloadError::EmptyChannelSet);
        }
    }
    Ok(WorkloadSpec { kind: Kind::MemFlood { mode }, threads })
}

pub fn idle_workload() -> WorkloadSpec {
    WorkloadSpec { kind: Kind::Idle, threads: 1 }
}

/// How many fill+measure passes the cleansing discover stage gives a victim
/// to betray itself by re-touching an evicted line.
const DISCOVER_PASSES: usize = 3;

/// Adaptive LLC cleansing. Discover stage: for every set, prime each of the
/// attacker's slice groups and re-measure; a latency spike means the group's
/// (set, slice) is contended by someone else, so the set joins `victim_sets`.
/// Attack stage: loop over exactly the conflicting groups.
///
/// Runs against the live victim through the timing-only interface.
pub fn adaptive_llc_cleanse(
    iface: &mut dyn AccessInterface,
    buffer: &EvictionBuffer,
    assoc: u32,
    threads: u32,
) -> Result<WorkloadSpec, WorkloadError> {
    if threads == 0 {
        return Err(WorkloadError::ZeroThreads);
    }
    if buffer.ways() != assoc {
        return Err(WorkloadError::IncompleteBuffer(format!(
            "buffer groups hold {} lines, associativity is {assoc}",
            buffer.ways()
        )));
    }
    let threshold = conflict_threshold(iface)?;
    let mut victim_sets = Vec::new();
    let mut addresses = Vec::new();
    for set in 0..buffer.sets() {
        let mut set_hit = false;
        for group in buffer.groups(set) {
            // Prime once, then re-measure a few passes: a quiet group stays
            // resident and reads back flat; any outside reuse of this
            // (set, slice) evicts one of ours and shows up as a spike.
            for &a in group {
                iface.access(MemOp::read(a)).map_err(|e| WorkloadError::Discovery(e.to_string()))?;
            }
            let mut conflict = false;
            for _ in 0..DISCOVER_PASSES {
                for &a in group {
                    let lat = iface
                        .access(MemOp::read(a))
                        .map_err(|e| WorkloadError::Discovery(e.to_string()))?;
                    conflict |= lat > threshold;
                }
            }
            if conflict {
                set_hit = true;
                addresses.push(group.clone());
            }
        }
        if set_hit {
            victim_sets.push(set);
        }
    }
    if victim_sets.is_empty() {
        return Ok(WorkloadSpec { kind: Kind::Idle, threads });
    }
    Ok(WorkloadSpec { kind: Kind::FocusedCleanse { victim_sets, addresses }, threads })
}

/// Latency above this means a line had to be re-fetched from DRAM; halfway
/// between an LLC hit and a cold fetch, measured rather than assumed.
fn conflict_threshold(iface: &mut dyn AccessInterface) -> Result<u64, WorkloadError> {
    let (base, len) = iface.region();
    // A private-cache-resident line: the fast side of the divide.
    iface.access(MemOp::read(base)).map_err(|e| WorkloadError::Discovery(e.to_string()))?;
    let fast = iface.access(MemOp::read(base)).map_err(|e| WorkloadError::Discovery(e.to_string()))?;
    // A never-touched line: the slow side.
    let cold_addr = base + len - iface.geometry().line_size;
    let slow =
        iface.access(MemOp::read(cold_addr)).map_err(|e| WorkloadError::Discovery(e.to_string()))?;
    if slow <= fast + 20 {
        return Err(WorkloadError::Discovery(format!(
            "no latency separation: warm {fast}, cold {slow}"
        )));
    }
    Ok((fast + slow) / 2)
}

impl WorkloadSpec {
    pub fn threads(&self) -> u32 {
        self.threads
    }

    /// Sets selected by an adaptive discover stage, if this spec has one.
    pub fn victim_sets(&self) -> Option<&[u32]> {
        match &self.kind {
            Kind::FocusedCleanse { victim_sets, .. } => Some(victim_sets),
            _ => None,
        }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self.kind, Kind::Idle)
    }

    /// Mints one op stream per thread. Every address lies inside `region`
    /// (eviction-buffer and pattern addresses were produced from it upstream).
    pub fn instantiate(
        &self,
        region: (u64, u64),
        geometry: &PublicGeometry,
        seed: u64,
    ) -> Result<Vec<Box<dyn OpSource>>, WorkloadError> {
        let line = geometry.line_size;
        let (base, len) = region;
        match &self.kind {
            Kind::Idle => Ok((0..self.threads).map(|_| Box::new(IdleSource) as _).collect()),
            Kind::Stream { footprint, locality, stride_lines, pulse } => {
                if *footprint > len {
                    return Err(WorkloadError::RegionTooSmall { need: *footprint, have: len });
                }
                let half_lines = footprint / 2 / line;
                if half_lines == 0 {
                    return Err(WorkloadError::FootprintTooSmall {
                        footprint: *footprint,
                        min: 2 * line,
                    });
                }
                let src = base;
                let dst = base + half_lines * line;
                let mut order: Vec<u64> = (0..half_lines).step_by(*stride_lines as usize).collect();
                if *locality == Locality::Low {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
                    order.shuffle(&mut rng);
                }
                let mut ops = Vec::with_capacity(order.len() * 2);
                for i in order {
                    ops.push(MemOp::read(src + i * line));
                    ops.push(MemOp::write(dst + i * line));
                }
                let (burst, gap) = match pulse {
                    Some(p) => (p.burst_ops, p.gap_cycles),
                    None => (ops.len() as u64, 0),
                };
                Ok(vec![Box::new(PulsedOps::new(ops, burst, gap))])
            }
            Kind::LlcCleanse { buffer } => {
                let sets = buffer.sets();
                let per = sets.div_ceil(self.threads);
                let mut out: Vec<Box<dyn OpSource>> = Vec::new();
                for t in 0..self.threads {
                    let from = t * per;
                    let to = ((t + 1) * per).min(sets);
                    let addrs = buffer.addresses_in_set_range(from, to);
                    let ops = addrs.into_iter().map(MemOp::read).collect();
                    out.push(Box::new(PulsedOps::new(ops, u64::MAX, 0)));
                }
                Ok(out)
            }
            Kind::FocusedCleanse { addresses, .. } => {
                let mut per_thread: Vec<Vec<MemOp>> = vec![Vec::new(); self.threads as usize];
                for (i, group) in addresses.iter().enumerate() {
                    let slot = &mut per_thread[i % self.threads as usize];
                    slot.extend(group.iter().map(|&a| MemOp::read(a)));
                }
                Ok(per_thread
                    .into_iter()
                    .map(|ops| -> Box<dyn OpSource> {
                        if ops.is_empty() {
                            Box::new(IdleSource)
                        } else {
                            Box::new(PulsedOps::new(ops, u64::MAX, 0))
                        }
                    })
                    .collect())
            }
            Kind::AtomicLock { kind } => {
                let op = match kind {
                    AtomicKind::Unaligned => MemOp::unaligned_atomic(base + line - 1),
                    AtomicKind::Uncached => MemOp::uncached_atomic(base),
                    AtomicKind::AlignedControl => MemOp::aligned_atomic(base),
                };
                Ok(vec![Box::new(PulsedOps::new(vec![op], u64::MAX, 0))])
            }
            Kind::MemFlood { mode } => match mode {
                FloodMode::Full => {
                    let llc_bytes = geometry.llc_slices as u64
                        * geometry.llc_ways as u64
                        * geometry.llc_sets_per_slice as u64
                        * line;
                    let need = 20 * llc_bytes;
                    if need > len {
                        return Err(WorkloadError::RegionTooSmall { need, have: len });
                    }
                    // Stripe the buffer across threads one DRAM row at a
                    // time: each stream stays row-hit-friendly, and
                    // concurrent streams sit on different banks and channels
                    // instead of marching in phase on the same ones.
                    let stripe = FLOOD_STRIPE_BYTES.max(line);
                    let blocks = need / stripe;
                    if blocks < self.threads as u64 {
                        return Err(WorkloadError::TooManyThreads {
                            threads: self.threads,
                            limit: blocks as u32,
                        });
                    }
                    Ok((0..self.threads as u64)
                        .map(|t| {
                            let mine: Vec<u64> = (t..blocks)
                                .step_by(self.threads as usize)
                                .map(|b| base + b * stripe)
                                .collect();
                            Box::new(BlockReadLoop::cached(mine, line, stripe / line)) as _
                        })
                        .collect())
                }
                FloodMode::Targeted { patterns } => {
                    let shift = patterns
                        .iter()
                        .flat_map(|p| p.bits.iter().copied())
                        .min()
                        .ok_or(WorkloadError::EmptyChannelSet)?;
                    let block = 1u64 << shift;
                    let blocks: Vec<u64> = (base..base + len)
                        .step_by(block as usize)
                        .filter(|&a| patterns.iter().any(|p| p.matches(a)))
                        .collect();
                    if blocks.is_empty() {
                        return Err(WorkloadError::RegionTooSmall { need: block * 2, have: len });
                    }
                    let lines_per_block = block / line;
                    Ok((0..self.threads as usize)
                        .map(|t| {
                            // Round-robin blocks across threads.
                            let mine: Vec<u64> =
                                blocks.iter().skip(t).step_by(self.threads as usize).copied().collect();
                            if mine.is_empty() {
                                Box::new(IdleSource) as _
                            } else {
                                Box::new(BlockReadLoop::new(mine, line, lines_per_block)) as _
                            }
                        })
                        .collect())
                }
            },
        }
    }
}
