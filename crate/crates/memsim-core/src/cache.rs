//! Set-associative caches with true-LRU replacement.
//!
//! Lines are stored as line addresses (byte address >> line shift). Each set
//! keeps its lines ordered most-recently-used first, so the LRU victim is the
//! last element. Associativities are small (<= 20), which makes a plain
//! vector scan both the simplest and the fastest structure here.

/// One cache level: either a per-vCPU private cache or one LLC slice bank.
#[derive(Debug, Clone)]
pub struct SetAssocCache {
    sets: Vec<Vec<u64>>,
    ways: usize,
    set_mask: u64,
}

impl SetAssocCache {
    pub fn new(num_sets: u64, ways: u32) -> Self {
        assert!(num_sets.is_power_of_two());
        SetAssocCache {
            sets: vec![Vec::with_capacity(ways as usize); num_sets as usize],
            ways: ways as usize,
            set_mask: num_sets - 1,
        }
    }

    /// Lookup; on hit the line is promoted to MRU.
    #[inline]
    pub fn lookup_touch(&mut self, line: u64) -> bool {
        let set = &mut self.sets[(line & self.set_mask) as usize];
        if let Some(pos) = set.iter().position(|&l| l == line) {
            let hit = set.remove(pos);
            set.insert(0, hit);
            true
        } else {
            false
        }
    }

    /// Inserts a line as MRU, returning the evicted LRU line if the set was
    /// full. Re-inserting a present line just promotes it.
    #[inline]
    pub fn insert(&mut self, line: u64) -> Option<u64> {
        let set = &mut self.sets[(line & self.set_mask) as usize];
        if let Some(pos) = set.iter().position(|&l| l == line) {
            let hit = set.remove(pos);
            set.insert(0, hit);
            return None;
        }
        let evicted = if set.len() == self.ways { set.pop() } else { None };
        set.insert(0, line);
        evicted
    }

    /// Removes a line if present (back-invalidation).
    #[inline]
    pub fn remove(&mut self, line: u64) -> bool {
        let set = &mut self.sets[(line & self.set_mask) as usize];
        if let Some(pos) = set.iter().position(|&l| l == line) {
            set.remove(pos);
            true
        } else {
            false
        }
    }

    #[cfg_attr(not(feature = "oracle"), allow(dead_code))]
    #[inline]
    pub fn contains(&self, line: u64) -> bool {
        self.sets[(line & self.set_mask) as usize].contains(&line)
    }
}

/// The shared inclusive LLC: per (slice, set) LRU stacks.
#[derive(Debug, Clone)]
pub struct Llc {
    sets: Vec<Vec<u64>>,
    ways: usize,
    sets_per_slice: usize,
}

impl Llc {
    pub fn new(slices: u32, sets_per_slice: u32, ways: u32) -> Self {
        Llc {
            sets: vec![Vec::with_capacity(ways as usize); (slices * sets_per_slice) as usize],
            ways: ways as usize,
            sets_per_slice: sets_per_slice as usize,
        }
    }

    #[inline]
    pub fn lookup_touch(&mut self, slice: u32, set: u32, line: u64) -> bool {
        let s = &mut self.sets[slice as usize * self.sets_per_slice + set as usize];
        if let Some(pos) = s.iter().position(|&l| l == line) {
            let hit = s.remove(pos);
            s.insert(0, hit);
            true
        } else {
            false
        }
    }

    #[inline]
    pub fn insert(&mut self, slice: u32, set: u32, line: u64) -> Option<u64> {
        let ways = self.ways;
        let s = &mut self.sets[slice as usize * self.sets_per_slice + set as usize];
        if let Some(pos) = s.iter().position(|&l| l == line) {
            let hit = s.remove(pos);
            s.insert(0, hit);
            return None;
        }
        let evicted = if s.len() == ways { s.pop() } else { None };
        s.insert(0, line);
        evicted
    }

    #[cfg_attr(not(feature = "oracle"), allow(dead_code))]
    pub fn contains(&self, slice: u32, set: u32, line: u64) -> bool {
        self.sets[slice as usize * self.sets_per_slice + set as usize].contains(&line)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lru_evicts_least_recent() {
        let mut c = SetAssocCache::new(1, 2);
        assert_eq!(c.insert(1), None);
        assert_eq!(c.insert(2), None);
        assert!(c.lookup_touch(1)); // 1 becomes MRU
        assert_eq!(c.insert(3), Some(2));
        assert!(c.contains(1));
        assert!(!c.contains(2));
    }

    #[test]
    fn reinsert_promotes_without_eviction() {
        let mut c = SetAssocCache::new(1, 2);
        c.insert(1);
        c.insert(2);
        assert_eq!(c.insert(2), None);
        assert_eq!(c.insert(3), Some(1));
    }

    #[test]
    fn cyclic_overflow_thrashes_under_true_lru() {
        // ways + 1 distinct lines accessed cyclically: every access misses.
        let mut c = SetAssocCache::new(1, 4);
        let lines = [10u64, 20, 30, 40, 50];
        for l in lines {
            c.insert(l);
        }
        for _pass in 0..3 {
            for l in lines {
                assert!(!c.lookup_touch(l), "line {l} unexpectedly survived");
                c.insert(l);
            }
        }
    }

    #[test]
    fn sets_are_independent() {
        let mut c = SetAssocCache::new(2, 1);
        c.insert(0); // set 0
        c.insert(1); // set 1
        assert!(c.contains(0));
        assert!(c.contains(1));
        assert_eq!(c.insert(2), Some(0)); // set 0 again
        assert!(c.contains(1));
    }
}
