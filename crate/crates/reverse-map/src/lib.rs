//! Timing-only reverse engineering of the hidden address mappings: LLC slice
//! groups per set, DRAM bank bits, the channel bits among them, and which
//! channels currently carry someone else's traffic.
//!
//! Every procedure works through [`memsim_core::AccessInterface`] — latencies
//! and datasheet geometry in, address classifications out. Thresholds are
//! measured on the spot, never assumed.

mod dram_bits;
mod slices;

use memsim_core::AccessInterface;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use workloads::{ChannelPattern, EvictionBuffer};

pub use dram_bits::{discover_bank_bits, discover_channel_bits, discover_hot_channels};
pub use slices::map_llc_slices;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("timing clusters are inseparable ({context}: spread {gap} cycles)")]
    NoSeparation { context: &'static str, gap: u64 },
    #[error("set {set}: candidate budget exhausted after {tried} addresses")]
    BudgetExhausted { set: u32, tried: usize },
    #[error("probe region too small: need {need} bytes, have {have}")]
    RegionTooSmall { need: u64, have: u64 },
    #[error("no bank bits to classify")]
    NoBankBits,
    #[error("inconsistent conflict group: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Sim(#[from] memsim_core::SimError),
}

/// Everything the attack side learns about the machine before choosing its
/// weapons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub bank_bits: Vec<u8>,
    pub channel_bits: Vec<u8>,
    pub slice_groups: EvictionBuffer,
    pub hot_channels: Vec<ChannelPattern>,
}

/// Runs the whole discovery sequence: bank bits, channel bits, slice groups,
/// then the channels that are busy right now.
pub fn probe_all(iface: &mut dyn AccessInterface) -> Result<ProbeResult, ProbeError> {
    let bank_bits = discover_bank_bits(iface)?;
    let channel_bits = discover_channel_bits(iface, &bank_bits)?;
    let slice_groups = map_llc_slices(iface)?;
    let hot_channels = discover_hot_channels(iface, &channel_bits)?;
    Ok(ProbeResult { bank_bits, channel_bits, slice_groups, hot_channels })
}
