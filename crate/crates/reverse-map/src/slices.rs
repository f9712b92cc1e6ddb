//! Conflict-based recovery of the LLC slice hash.
//!
//! For each set, grow a pool of same-set addresses, accepting a candidate
//! only when re-reading the pool stays fast. A candidate whose slice is
//! already full evicts that slice's oldest pool line; re-reading the pool in
//! insertion order then cascades through exactly that slice's members — every
//! one of them misses — which both rejects the candidate and hands us the
//! complete slice group for free. Once the pool holds `ways x slices` lines
//! it fills the whole set, and a few more overflowing probes split whatever
//! groups the build phase didn't already reveal.

use std::collections::HashSet;

use memsim_core::{AccessInterface, MemOp};
use workloads::EvictionBuffer;

use crate::ProbeError;

/// Candidate addresses allowed per set, as a multiple of the pool size.
const CANDIDATE_FACTOR: usize = 16;
/// Minimum hit-to-refetch latency spread for a usable threshold.
const MIN_GAP: u64 = 30;

struct Scan {
    anchor: u64,
    set_span: u64,
    line: u64,
    budget: usize,
    slices: usize,
    ways: usize,
    threshold: u64,
}

/// Timing-derived eviction groups for every set of the LLC: one group per
/// slice, `ways` addresses each, built without ever seeing the hash.
pub fn map_llc_slices(iface: &mut dyn AccessInterface) -> Result<EvictionBuffer, ProbeError> {
    let g = iface.geometry();
    let (base, len) = iface.region();
    let set_span = g.llc_sets_per_slice as u64 * g.line_size;
    let anchor = base.div_ceil(set_span) * set_span;
    let available = ((base + len).saturating_sub(anchor) / set_span) as usize;
    let pool_size = (g.llc_slices * g.llc_ways) as usize;
    if available < pool_size {
        return Err(ProbeError::RegionTooSmall {
            need: pool_size as u64 * set_span,
            have: len,
        });
    }
    let scan = Scan {
        anchor,
        set_span,
        line: g.line_size,
        budget: (CANDIDATE_FACTOR * pool_size).min(available),
        slices: g.llc_slices as usize,
        ways: g.llc_ways as usize,
        threshold: refetch_threshold(iface)?,
    };
    let mut per_set = Vec::with_capacity(g.llc_sets_per_slice as usize);
    for set in 0..g.llc_sets_per_slice {
        per_set.push(map_one_set(iface, set, &scan)?);
    }
    EvictionBuffer::from_groups(per_set, g.llc_ways)
        .map_err(|e| ProbeError::Inconsistent(e.to_string()))
}

/// Midpoint between a warm re-read and a cold fetch, measured on the spot.
fn refetch_threshold(iface: &mut dyn AccessInterface) -> Result<u64, ProbeError> {
    let (base, len) = iface.region();
    let line = iface.geometry().line_size;
    iface.access(MemOp::read(base))?;
    let warm = iface.access(MemOp::read(base))?;
    let cold = iface.access(MemOp::read(base + len - line))?;
    if cold < warm + MIN_GAP {
        return Err(ProbeError::NoSeparation {
            context: "cache hit against DRAM refetch",
            gap: cold.saturating_sub(warm),
        });
    }
    Ok((warm + cold) / 2)
}

/// Loads `c`, then re-reads the pool in insertion order and returns the
/// members that had to be refetched. Nonempty means `c` overflowed its slice,
/// and the cascade lists that slice completely; the walk also reloads every
/// flagged line, so the pool is resident again on return.
fn overflow_probe(
    iface: &mut dyn AccessInterface,
    pool: &[u64],
    c: u64,
    threshold: u64,
) -> Result<Vec<u64>, ProbeError> {
    iface.access(MemOp::read(c))?;
    let mut flagged = Vec::new();
    for &m in pool {
        if iface.access(MemOp::read(m))? > threshold {
            flagged.push(m);
        }
    }
    Ok(flagged)
}

fn map_one_set(
    iface: &mut dyn AccessInterface,
    set: u32,
    scan: &Scan,
) -> Result<Vec<Vec<u64>>, ProbeError> {
    let addr_of = |k: usize| scan.anchor + set as u64 * scan.line + k as u64 * scan.set_span;
    let target = scan.slices * scan.ways;
    let mut pool: Vec<u64> = Vec::with_capacity(target);
    let mut groups: Vec<Vec<u64>> = Vec::new();
    let mut k = 0;

    while pool.len() < target {
        if k >= scan.budget {
            return Err(ProbeError::BudgetExhausted { set, tried: k });
        }
        let c = addr_of(k);
        k += 1;
        // A pool smaller than one slice's worth cannot overflow anything.
        if pool.len() < scan.ways {
            iface.access(MemOp::read(c))?;
            pool.push(c);
            continue;
        }
        let flagged = overflow_probe(iface, &pool, c, scan.threshold)?;
        if flagged.is_empty() {
            pool.push(c);
        } else if flagged.len() == scan.ways && !groups.contains(&flagged) {
            groups.push(flagged);
        }
    }

    // Split whatever the build-phase rejections didn't already reveal; the
    // leftover lines after `slices - 1` groups are the last group.
    while groups.len() + 1 < scan.slices {
        if k >= scan.budget {
            return Err(ProbeError::BudgetExhausted { set, tried: k });
        }
        let c = addr_of(k);
        k += 1;
        let flagged = overflow_probe(iface, &pool, c, scan.threshold)?;
        if flagged.len() != scan.ways {
            return Err(ProbeError::Inconsistent(format!(
                "set {set}: probe flagged {} of {} expected lines",
                flagged.len(),
                scan.ways
            )));
        }
        if !groups.contains(&flagged) {
            groups.push(flagged);
        }
    }

    let known: HashSet<u64> = groups.iter().flatten().copied().collect();
    let rest: Vec<u64> = pool.iter().copied().filter(|a| !known.contains(a)).collect();
    if rest.len() != scan.ways {
        return Err(ProbeError::Inconsistent(format!(
            "set {set}: {} unclassified lines left for the last slice",
            rest.len()
        )));
    }
    groups.push(rest);
    Ok(groups)
}
