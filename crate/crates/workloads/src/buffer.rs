//! Attacker-held address collections: the eviction buffer covering every
//! (set, slice) of the LLC, and channel bit-pattern classes.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::WorkloadError;

/// Addresses that exactly fill the LLC: for each set, one group per slice,
/// each group holding `ways` line addresses that all land in that one
/// (set, slice). Group-to-slice correspondence is unknown to the attacker —
/// groups are timing-derived equivalence classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvictionBuffer {
    ways: u32,
    per_set: Vec<Vec<Vec<u64>>>,
}

impl EvictionBuffer {
    /// Validates and wraps per-set groups: `per_set[set]` lists that set's
    /// slice groups, each exactly `ways` addresses, all globally disjoint.
    pub fn from_groups(per_set: Vec<Vec<Vec<u64>>>, ways: u32) -> Result<Self, WorkloadError> {
        let mut seen = HashSet::new();
        for (set, groups) in per_set.iter().enumerate() {
            for g in groups {
                if g.len() != ways as usize {
                    return Err(WorkloadError::IncompleteBuffer(format!(
                        "set {set} has a group of {} addresses, want {ways}",
                        g.len()
                    )));
                }
                for &a in g {
                    if !seen.insert(a) {
                        return Err(WorkloadError::IncompleteBuffer(format!(
                            "address {a:#x} appears in more than one group"
                        )));
                    }
                }
            }
        }
        Ok(EvictionBuffer { ways, per_set })
    }

    pub fn ways(&self) -> u32 {
        self.ways
    }

    pub fn sets(&self) -> u32 {
        self.per_set.len() as u32
    }

    pub fn groups(&self, set: u32) -> &[Vec<u64>] {
        &self.per_set[set as usize]
    }

    /// Whether every set carries exactly `slices` groups.
    pub fn covers(&self, sets: u32, slices: u32) -> bool {
        self.per_set.len() == sets as usize
            && self.per_set.iter().all(|g| g.len() == slices as usize)
    }

    /// All addresses of the sets in `[from, to)`, group by group.
    pub fn addresses_in_set_range(&self, from: u32, to: u32) -> Vec<u64> {
        self.per_set[from as usize..to as usize]
            .iter()
            .flat_map(|groups| groups.iter().flatten().copied())
            .collect()
    }

    pub fn total_addresses(&self) -> usize {
        self.per_set.iter().map(|g| g.len() * self.ways as usize).sum()
    }
}

/// One channel equivalence class: a fixed assignment of the discovered
/// channel index bits. `value` bit i gives the state of address bit
/// `bits[i]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelPattern {
    pub bits: Vec<u8>,
    pub value: u32,
}

impl ChannelPattern {
    /// Every assignment of the given bits, in numeric order.
    pub fn all(bits: &[u8]) -> Vec<ChannelPattern> {
        (0..1u32 << bits.len())
            .map(|value| ChannelPattern { bits: bits.to_vec(), value })
            .collect()
    }

    pub fn matches(&self, addr: u64) -> bool {
        self.bits
            .iter()
            .enumerate()
            .all(|(i, &b)| (addr >> b) & 1 == ((self.value >> i) & 1) as u64)
    }

    /// Forces the pattern's bits onto an address.
    pub fn apply(&self, addr: u64) -> u64 {
        let mut a = addr;
        for (i, &b) in self.bits.iter().enumerate() {
            a = (a & !(1u64 << b)) | ((((self.value >> i) & 1) as u64) << b);
        }
        a
    }
}
