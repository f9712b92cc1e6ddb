//! Server geometry and the hidden physical-address mappings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("address {0:#x} outside simulated physical range ({1:#x} bytes)")]
    AddressOutOfRange(u64, u64),
}

fn invalid(clause: &str) -> ConfigError {
    ConfigError::Invalid(clause.to_string())
}

/// Latency table, all in cycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub private_hit: u64,
    pub llc_hit: u64,
    pub dram_buffer_hit: u64,
    pub dram_buffer_miss: u64,
    pub lock_stall: u64,
    /// Extra scheduler delay added per request left waiting in the bank queue
    /// when one is dispatched.
    pub queued_request_delay: u64,
}

impl Default for LatencyTable {
    fn default() -> Self {
        LatencyTable {
            private_hit: 4,
            llc_hit: 40,
            dram_buffer_hit: 150,
            dram_buffer_miss: 250,
            lock_stall: 1000,
            queued_request_delay: 5,
        }
    }
}

/// Geometry plus timing of the simulated server. Defaults mirror a two-socket
/// Xeon E5-2667 v3 package: 15MB 20-way LLC in 6 slices, 8 DRAM channels,
/// 1024 banks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyConfig {
    pub line_size: u64,
    pub llc_slices: u32,
    pub llc_ways: u32,
    pub llc_sets_per_slice: u32,
    pub private_cache_bytes: u64,
    pub private_ways: u32,
    pub channels: u32,
    pub banks: u32,
    /// Address bits selecting the DRAM bank. Hidden from attack-side code.
    pub bank_bit_positions: Vec<u8>,
    /// Address bits selecting the channel; always a subset of the bank bits.
    pub channel_bit_positions: Vec<u8>,
    pub lat: LatencyTable,
    /// One request leaves a bank every `bank_service` cycles.
    pub bank_service: u64,
    /// One request crosses a channel every `channel_service` cycles.
    pub channel_service: u64,
    /// Length of one duty window; 16 windows form a frame.
    pub duty_window_cycles: u64,
    /// Simulated-time scale: how many cycles one millisecond spans.
    pub cycles_per_ms: u64,
    pub mem_bytes: u64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            line_size: 64,
            llc_slices: 6,
            llc_ways: 20,
            llc_sets_per_slice: 2048,
            private_cache_bytes: 256 * 1024,
            private_ways: 8,
            channels: 8,
            banks: 1024,
            bank_bit_positions: (13..=22).collect(),
            channel_bit_positions: vec![13, 14, 15],
            lat: LatencyTable::default(),
            bank_service: 120,
            channel_service: 140,
            duty_window_cycles: 1000,
            cycles_per_ms: 100_000,
            mem_bytes: 1 << 30,
        }
    }
}

impl TopologyConfig {
    /// Shrunk geometry for fast experiments: 512KB LLC in 4 slices, 16KB
    /// private caches, 4 channels, 64 banks, and a compressed time scale.
    pub fn desk_scale() -> Self {
        TopologyConfig {
            line_size: 64,
            llc_slices: 4,
            llc_ways: 8,
            llc_sets_per_slice: 256,
            private_cache_bytes: 16 * 1024,
            private_ways: 4,
            channels: 4,
            banks: 64,
            bank_bit_positions: (13..=18).collect(),
            channel_bit_positions: vec![13, 14],
            lat: LatencyTable::default(),
            bank_service: 120,
            channel_service: 140,
            duty_window_cycles: 1000,
            cycles_per_ms: 100,
            mem_bytes: 1 << 26,
        }
    }

    pub fn llc_bytes(&self) -> u64 {
        self.llc_slices as u64 * self.llc_ways as u64 * self.llc_sets_per_slice as u64 * self.line_size
    }

    pub fn private_sets(&self) -> u64 {
        self.private_cache_bytes / (self.line_size * self.private_ways as u64)
    }

    pub fn duty_frame_cycles(&self) -> u64 {
        16 * self.duty_window_cycles
    }

    /// Re-draws the hidden bank/channel bit positions from a seed, keeping
    /// the counts consistent with `banks` and `channels`. Candidate positions
    /// start at bit 13 (row size 8KB; lower bits address within a row).
    pub fn randomize_mapping_bits(&mut self, seed: u64) {
        let n_bank = self.banks.trailing_zeros() as usize;
        let n_chan = self.channels.trailing_zeros() as usize;
        let top = (63 - self.mem_bytes.leading_zeros()) as u8; // mem_bytes is a power of two
        let mut candidates: Vec<u8> = (13..top).collect();
        // Fisher-Yates keyed off a splitmix stream.
        let mut state = seed ^ 0x9e37_79b9_7f4a_7c15;
        for i in (1..candidates.len()).rev() {
            state = splitmix64(state);
            let j = (state % (i as u64 + 1)) as usize;
            candidates.swap(i, j);
        }
        let mut bank: Vec<u8> = candidates[..n_bank].to_vec();
        bank.sort_unstable();
        let mut chan_pick: Vec<u8> = bank.clone();
        let mut state2 = splitmix64(seed ^ 0x5851_f42d_4c95_7f2d);
        for i in (1..chan_pick.len()).rev() {
            state2 = splitmix64(state2);
            let j = (state2 % (i as u64 + 1)) as usize;
            chan_pick.swap(i, j);
        }
        let mut chan: Vec<u8> = chan_pick[..n_chan].to_vec();
        chan.sort_unstable();
        self.bank_bit_positions = bank;
        self.channel_bit_positions = chan;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.line_size.is_power_of_two() || self.line_size < 8 {
            return Err(invalid("line_size must be a power of two >= 8"));
        }
        for (name, v) in [
            ("llc_slices", self.llc_slices),
            ("llc_ways", self.llc_ways),
            ("llc_sets_per_slice", self.llc_sets_per_slice),
            ("channels", self.channels),
            ("banks", self.banks),
            ("private_ways", self.private_ways),
        ] {
            if v == 0 {
                return Err(invalid(&format!("{name} must be > 0")));
            }
        }
        if !self.llc_sets_per_slice.is_power_of_two() {
            return Err(invalid("llc_sets_per_slice must be a power of two"));
        }
        if !self.mem_bytes.is_power_of_two() {
            return Err(invalid("mem_bytes must be a power of two"));
        }
        if !self.channels.is_power_of_two() || !self.banks.is_power_of_two() {
            return Err(invalid("channels and banks must be powers of two"));
        }
        if (1u64 << self.bank_bit_positions.len()) != self.banks as u64 {
            return Err(invalid("2^|bank_bit_positions| must equal banks"));
        }
        if (1u64 << self.channel_bit_positions.len()) != self.channels as u64 {
            return Err(invalid("2^|channel_bit_positions| must equal channels"));
        }
        if !self.channel_bit_positions.iter().all(|b| self.bank_bit_positions.contains(b)) {
            return Err(invalid("channel_bit_positions must be a subset of bank_bit_positions"));
        }
        let mut sorted = self.bank_bit_positions.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.bank_bit_positions.len() {
            return Err(invalid("bank_bit_positions must be distinct"));
        }
        let addr_bits = 63 - self.mem_bytes.leading_zeros() as u8;
        for &b in &self.bank_bit_positions {
            if b < 13 {
                return Err(invalid("bank_bit_positions must lie at or above bit 13 (8KB rows)"));
            }
            if b >= addr_bits {
                return Err(invalid("bank_bit_positions must lie inside the physical address range"));
            }
        }
        let l = &self.lat;
        if !(l.private_hit < l.llc_hit && l.llc_hit < l.dram_buffer_hit && l.dram_buffer_hit < l.dram_buffer_miss) {
            return Err(invalid(
                "latencies must be strictly ordered: private_hit < llc_hit < dram_buffer_hit < dram_buffer_miss",
            ));
        }
        if self.private_cache_bytes % (self.line_size * self.private_ways as u64) != 0 {
            return Err(invalid("private_cache_bytes must be a multiple of line_size * private_ways"));
        }
        if !self.private_sets().is_power_of_two() {
            return Err(invalid("private cache set count must be a power of two"));
        }
        if self.duty_window_cycles == 0 || self.cycles_per_ms == 0 {
            return Err(invalid("duty_window_cycles and cycles_per_ms must be > 0"));
        }
        if self.bank_service == 0 || self.channel_service == 0 {
            return Err(invalid("bank_service and channel_service must be > 0"));
        }
        if self.llc_bytes() > self.mem_bytes {
            return Err(invalid("mem_bytes must exceed total LLC bytes"));
        }
        Ok(())
    }
}

/// Where one address lands in the hierarchy. Test oracle only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementInfo {
    pub set_index: u32,
    pub slice_index: u32,
    pub bank_index: u32,
    pub channel_index: u32,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Geometry plus the seeded hidden mappings. Same (config, seed) always
/// yields bit-identical placements.
#[derive(Debug, Clone)]
pub struct MemoryTopology {
    pub config: TopologyConfig,
    pub seed: u64,
    hash_key: u64,
    line_shift: u32,
    set_mask: u64,
    set_bits: u32,
    /// Bits >= 13 that are not bank bits form the row id, packed densely.
    row_bit_positions: Vec<u8>,
}

/// Validates the config and fixes the hidden mappings from the seed.
pub fn build_topology(config: TopologyConfig, seed: u64) -> Result<MemoryTopology, ConfigError> {
    config.validate()?;
    let line_shift = config.line_size.trailing_zeros();
    let set_bits = config.llc_sets_per_slice.trailing_zeros();
    let addr_bits = 63 - config.mem_bytes.leading_zeros() as u8;
    let row_bit_positions: Vec<u8> =
        (13..addr_bits).filter(|b| !config.bank_bit_positions.contains(b)).collect();
    Ok(MemoryTopology {
        hash_key: splitmix64(seed ^ 0xa076_1d64_78bd_642f),
        line_shift,
        set_mask: (config.llc_sets_per_slice as u64) - 1,
        set_bits,
        row_bit_positions,
        config,
        seed,
    })
}

impl MemoryTopology {
    #[inline]
    pub(crate) fn line_addr(&self, addr: u64) -> u64 {
        addr >> self.line_shift
    }

    #[inline]
    pub(crate) fn set_of(&self, addr: u64) -> u32 {
        (self.line_addr(addr) & self.set_mask) as u32
    }

    /// Keyed xor-fold of the line-address bits above the set index.
    #[inline]
    pub(crate) fn slice_of(&self, addr: u64) -> u32 {
        let high = self.line_addr(addr) >> self.set_bits;
        let mixed = splitmix64(high ^ self.hash_key);
        let folded = mixed ^ (mixed >> 32);
        (folded % self.config.llc_slices as u64) as u32
    }

    #[inline]
    pub(crate) fn bank_of(&self, addr: u64) -> u32 {
        let mut bank = 0u32;
        for (i, &pos) in self.config.bank_bit_positions.iter().enumerate() {
            bank |= (((addr >> pos) & 1) as u32) << i;
        }
        bank
    }

    #[inline]
    pub(crate) fn channel_of(&self, addr: u64) -> u32 {
        let mut ch = 0u32;
        for (i, &pos) in self.config.channel_bit_positions.iter().enumerate() {
            ch |= (((addr >> pos) & 1) as u32) << i;
        }
        ch
    }

    /// DRAM row id: all address bits at or above 13 that are not bank bits.
    #[inline]
    pub(crate) fn row_of(&self, addr: u64) -> u64 {
        let mut row = 0u64;
        for (i, &pos) in self.row_bit_positions.iter().enumerate() {
            row |= ((addr >> pos) & 1) << i;
        }
        row
    }

    #[cfg_attr(not(feature = "oracle"), allow(dead_code))]
    pub(crate) fn placement(&self, addr: u64) -> Result<PlacementInfo, ConfigError> {
        if addr >= self.config.mem_bytes {
            return Err(ConfigError::AddressOutOfRange(addr, self.config.mem_bytes));
        }
        Ok(PlacementInfo {
            set_index: self.set_of(addr),
            slice_index: self.slice_of(addr),
            bank_index: self.bank_of(addr),
            channel_index: self.channel_of(addr),
        })
    }

    /// The hidden-mapping oracle. Compiled in only for tests and the explicit
    /// `--oracle` harness path; attack-side code cannot reach it.
    #[cfg(feature = "oracle")]
    pub fn resolve(&self, addr: u64) -> Result<PlacementInfo, ConfigError> {
        self.placement(addr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_testbed_geometry() {
        let c = TopologyConfig::default();
        c.validate().unwrap();
        assert_eq!(c.llc_slices, 6);
        assert_eq!(c.llc_ways, 20);
        assert_eq!(c.llc_sets_per_slice, 2048);
        assert_eq!(c.llc_bytes(), 15 * 1024 * 1024);
        assert_eq!(c.channel_bit_positions.len(), 3);
        assert_eq!(c.bank_bit_positions.len(), 10);
    }

    #[test]
    fn desk_scale_is_valid() {
        TopologyConfig::desk_scale().validate().unwrap();
    }

    #[test]
    fn validation_names_the_violated_clause() {
        let mut c = TopologyConfig::default();
        c.channel_bit_positions = vec![5, 6, 7];
        let err = c.validate().unwrap_err();
        assert!(format!("{err}").contains("subset of bank_bit_positions"), "{err}");

        let mut c = TopologyConfig::default();
        c.lat.llc_hit = 3;
        let err = c.validate().unwrap_err();
        assert!(format!("{err}").contains("strictly ordered"), "{err}");

        let mut c = TopologyConfig::default();
        c.banks = 512;
        let err = c.validate().unwrap_err();
        assert!(format!("{err}").contains("2^|bank_bit_positions|"), "{err}");
    }

    #[test]
    fn same_seed_same_placement() {
        let t1 = build_topology(TopologyConfig::default(), 42).unwrap();
        let t2 = build_topology(TopologyConfig::default(), 42).unwrap();
        let mut x = 1u64;
        for _ in 0..10_000 {
            x = splitmix64(x);
            let addr = x % t1.config.mem_bytes;
            assert_eq!(t1.placement(addr).unwrap(), t2.placement(addr).unwrap());
        }
    }

    #[test]
    fn different_seed_changes_slices() {
        let t1 = build_topology(TopologyConfig::default(), 1).unwrap();
        let t2 = build_topology(TopologyConfig::default(), 2).unwrap();
        let mut diff = 0;
        for i in 0..1000u64 {
            let addr = i * 64 * 2048; // vary only the hash input bits
            if t1.slice_of(addr) != t2.slice_of(addr) {
                diff += 1;
            }
        }
        assert!(diff > 500, "only {diff}/1000 slice assignments changed across seeds");
    }

    #[test]
    fn set_index_ignores_high_bits() {
        // Set bits live in the low line-address bits; a delta at bit 29 sits
        // above every index and hash input boundary relevant to the set.
        let t = build_topology(TopologyConfig::default(), 7).unwrap();
        let a = 0x1234 * 64;
        assert_eq!(t.set_of(a), t.set_of(a + (1 << 29)));
    }

    #[test]
    fn flipping_a_channel_bit_changes_channel_and_bank() {
        let t = build_topology(TopologyConfig::default(), 7).unwrap();
        let addr = 0x0123_4567u64;
        let bit = t.config.channel_bit_positions[0];
        let flipped = addr ^ (1u64 << bit);
        assert_ne!(t.channel_of(addr), t.channel_of(flipped));
        assert_ne!(t.bank_of(addr), t.bank_of(flipped));
    }

    #[test]
    fn slice_histogram_is_uniform() {
        // Visit every distinct slice-hash input in the address space exactly
        // once; sampling with replacement would re-count fixed hash outputs
        // and inflate the statistic. Pearson chi-square against uniform;
        // critical value for df = 5 at p = 0.01 is 15.086.
        let t = build_topology(TopologyConfig::default(), 99).unwrap();
        let slices = t.config.llc_slices as usize;
        let groups = (t.config.mem_bytes >> t.line_shift) >> t.set_bits;
        let mut counts = vec![0u64; slices];
        for g in 0..groups {
            let addr = g << (t.line_shift + t.set_bits);
            counts[t.slice_of(addr) as usize] += 1;
        }
        let expected = groups as f64 / slices as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 15.086, "chi-square {chi2} exceeds the p=0.01 critical value; counts {counts:?}");
    }

    #[test]
    fn randomized_mapping_bits_stay_consistent() {
        for seed in 0..20 {
            let mut c = TopologyConfig::desk_scale();
            c.randomize_mapping_bits(seed);
            c.validate().unwrap();
            assert_eq!(c.bank_bit_positions.len(), 6);
            assert_eq!(c.channel_bit_positions.len(), 2);
        }
        // Different seeds should usually pick different positions.
        let mut a = TopologyConfig::desk_scale();
        a.randomize_mapping_bits(1);
        let mut b = TopologyConfig::desk_scale();
        b.randomize_mapping_bits(2);
        assert_ne!(
            (a.bank_bit_positions.clone(), a.channel_bit_positions.clone()),
            (b.bank_bit_positions, b.channel_bit_positions)
        );
    }

    #[test]
    fn row_id_excludes_bank_bits() {
        let t = build_topology(TopologyConfig::default(), 3).unwrap();
        let addr = 0x40_0000u64;
        for &b in &t.config.bank_bit_positions {
            assert_eq!(t.row_of(addr), t.row_of(addr ^ (1 << b)), "bank bit {b} leaked into row id");
        }
        // A non-bank bit above 13 changes the row.
        let non_bank = (13..28).find(|b| !t.config.bank_bit_positions.contains(b)).unwrap();
        assert_ne!(t.row_of(addr), t.row_of(addr ^ (1 << non_bank)));
        // Bits below 13 never change the row.
        assert_eq!(t.row_of(addr), t.row_of(addr ^ 0x1fc0));
    }

    #[test]
    fn out_of_range_address_errors() {
        let t = build_topology(TopologyConfig::desk_scale(), 1).unwrap();
        assert!(matches!(
            t.placement(t.config.mem_bytes).unwrap_err(),
            ConfigError::AddressOutOfRange(_, _)
        ));
    }
}
