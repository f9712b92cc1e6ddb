//! DRAM geometry from access timing.
//!
//! Bank bits come from a two-stage scan. Alternating uncached reads between
//! addresses differing in one bit are slow exactly when that bit selects the
//! row (the bank ping-pongs its row buffer) — stage one separates row bits
//! from everything else. Flipping a known row bit alongside each remaining
//! bit then separates bank bits (two banks, both rows stay open, fast) from
//! offset bits (one bank, row still ping-pongs, slow).
//!
//! Channel bits are the bank bits whose two sides don't contend: a helper
//! thread hammers one side while the probe times the other, and only a
//! shared channel slows it down.

use memsim_core::{AccessInterface, MemOp};
use workloads::ChannelPattern;

use crate::ProbeError;

/// Measured alternations per address pair when classifying a bit.
const PAIR_SAMPLES: usize = 16;
/// Unmeasured accesses that settle row-buffer state first.
const PAIR_WARMUP: usize = 2;
/// Timed accesses per channel trial.
const CHANNEL_SAMPLES: usize = 100;
/// Minimum fast/slow cluster separation before a split is trusted.
const MIN_GAP: f64 = 30.0;
/// Contended-to-solo ratio separating same-channel from cross-channel.
const CHANNEL_RATIO: f64 = 1.5;
/// Slowdown over the quietest channel that marks a channel as busy.
const HOT_RATIO: f64 = 1.2;

/// Two in-region addresses differing in exactly the given bits.
fn pair_for_bits(region: (u64, u64), bits: &[u8]) -> Option<(u64, u64)> {
    let (base, len) = region;
    let top = *bits.iter().max().expect("at least one bit");
    let align = 1u64 << (top + 1);
    let anchor = base.div_ceil(align).checked_mul(align)?;
    let mut partner = anchor;
    for &b in bits {
        partner |= 1 << b;
    }
    (partner < base.checked_add(len)?).then_some((anchor, partner))
}

fn mean_alternating(
    iface: &mut dyn AccessInterface,
    a: u64,
    b: u64,
) -> Result<f64, ProbeError> {
    for _ in 0..PAIR_WARMUP {
        iface.access(MemOp::uncached_read(a))?;
        iface.access(MemOp::uncached_read(b))?;
    }
    let mut sum = 0u64;
    for _ in 0..PAIR_SAMPLES {
        sum += iface.access(MemOp::uncached_read(a))?;
        sum += iface.access(MemOp::uncached_read(b))?;
    }
    Ok(sum as f64 / (2 * PAIR_SAMPLES) as f64)
}

/// Midpoint between the fastest and slowest mean, provided they actually
/// separate.
fn cluster_midpoint(means: &[(u8, f64)], context: &'static str) -> Result<f64, ProbeError> {
    let lo = means.iter().map(|&(_, m)| m).fold(f64::INFINITY, f64::min);
    let hi = means.iter().map(|&(_, m)| m).fold(0.0f64, f64::max);
    if hi - lo < MIN_GAP {
        return Err(ProbeError::NoSeparation { context, gap: (hi - lo) as u64 });
    }
    Ok((lo + hi) / 2.0)
}

/// Address bits that select the DRAM bank (channel bits included), sorted
/// ascending. Scans every bit the region can pair, from the line size up.
pub fn discover_bank_bits(iface: &mut dyn AccessInterface) -> Result<Vec<u8>, ProbeError> {
    let region = iface.region();
    let line_bits = iface.geometry().line_size.trailing_zeros() as u8;
    let mut stage1 = Vec::new();
    for b in line_bits..63 {
        match pair_for_bits(region, &[b]) {
            Some((x, y)) => stage1.push((b, mean_alternating(iface, x, y)?)),
            None => break,
        }
    }
    if stage1.len() < 2 {
        return Err(ProbeError::RegionTooSmall { need: 4 << line_bits, have: region.1 });
    }
    let t1 = cluster_midpoint(&stage1, "row bits against the rest")?;
    let row_bit = stage1
        .iter()
        .filter(|&&(_, m)| m > t1)
        .map(|&(b, _)| b)
        .min()
        .expect("slow cluster is nonempty");

    let mut stage2 = Vec::new();
    for &(b, m) in &stage1 {
        if m > t1 {
            continue;
        }
        if let Some((x, y)) = pair_for_bits(region, &[b, row_bit]) {
            stage2.push((b, mean_alternating(iface, x, y)?));
        }
    }
    let t2 = cluster_midpoint(&stage2, "bank bits against offset bits")?;
    Ok(stage2.iter().filter(|&&(_, m)| m < t2).map(|&(b, _)| b).collect())
}

fn timed_mean(iface: &mut dyn AccessInterface, addr: u64) -> Result<f64, ProbeError> {
    for _ in 0..PAIR_WARMUP {
        iface.access(MemOp::uncached_read(addr))?;
    }
    let mut sum = 0u64;
    for _ in 0..CHANNEL_SAMPLES {
        sum += iface.access(MemOp::uncached_read(addr))?;
    }
    Ok(sum as f64 / CHANNEL_SAMPLES as f64)
}

/// Which of the bank bits select the channel, sorted ascending. Uses vCPU 1
/// of the probing VM as the contending helper thread.
pub fn discover_channel_bits(
    iface: &mut dyn AccessInterface,
    bank_bits: &[u8],
) -> Result<Vec<u8>, ProbeError> {
    if bank_bits.is_empty() {
        return Err(ProbeError::NoBankBits);
    }
    let region = iface.region();
    let mut channel = Vec::new();
    for &b in bank_bits {
        let (quiet_side, timed_side) = pair_for_bits(region, &[b])
            .ok_or(ProbeError::RegionTooSmall { need: 3 << b, have: region.1 })?;
        let solo = timed_mean(iface, timed_side)?;
        iface.set_background_loop(1, vec![MemOp::uncached_read(quiet_side)])?;
        let contended = timed_mean(iface, timed_side)?;
        iface.clear_background(1)?;
        if contended / solo < CHANNEL_RATIO {
            channel.push(b);
        }
    }
    Ok(channel)
}

/// Channel patterns whose accesses run slower than the quietest channel's —
/// the channels someone else is using right now.
pub fn discover_hot_channels(
    iface: &mut dyn AccessInterface,
    channel_bits: &[u8],
) -> Result<Vec<ChannelPattern>, ProbeError> {
    if channel_bits.is_empty() {
        return Ok(Vec::new());
    }
    let region = iface.region();
    let (anchor, _) = pair_for_bits(region, channel_bits)
        .ok_or(ProbeError::RegionTooSmall { need: 3 << channel_bits[0], have: region.1 })?;
    let mut means = Vec::new();
    for p in ChannelPattern::all(channel_bits) {
        let m = timed_mean(iface, p.apply(anchor))?;
        means.push((p, m));
    }
    let quietest = means.iter().map(|&(_, m)| m).fold(f64::INFINITY, f64::min);
    Ok(means
        .into_iter()
        .filter(|&(_, m)| m > HOT_RATIO * quietest)
        .map(|(p, _)| p)
        .collect())
}
