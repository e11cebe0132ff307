//! Dual Bloom-filter hit/miss predictor.
//!
//! Each tracked cache set owns two small Bloom filters. Queries are answered
//! by the front filter (BF1). Every access that actually touches the set is
//! inserted into both filters; a counter `n` tracks how many distinct blocks
//! the back filter (BF2) has absorbed since the last reset. Once `n` reaches
//! the set's current associativity, BF1 is cleared and the two filters swap
//! roles: the fresh front filter then contains (at least) the `n` most
//! recently used blocks, which under LRU replacement is a superset of the
//! set's residents. Predicted hits can therefore be wrong (false positives,
//! costing only latency) but predicted misses never are.

/// Filter size used by the hardware sizing math: 256 bits = 32 bytes.
pub const DEFAULT_FILTER_BITS: u32 = 256;
pub const DEFAULT_PROBES: u32 = 4;

/// Identifier for the probe-derivation scheme, echoed in report headers so
/// results are reproducible across builds.
pub const HASH_FAMILY: &str = "splitmix64-double";

/// 64-bit avalanche mixer (splitmix64 finalizer).
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Bit-packed Bloom filter with double-hashed probe positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomFilter {
    words: Vec<u64>,
    bits: u32,
    probes: u32,
}

impl BloomFilter {
    /// `bits` must be a power of two (>= 32); small sizes are allowed so
    /// tests can force collisions.
    pub fn new(bits: u32, probes: u32) -> Self {
        assert!(bits.is_power_of_two() && bits >= 32, "filter bits must be a power of two >= 32");
        assert!(probes >= 1);
        Self {
            words: vec![0; (bits as usize).div_ceil(64)],
            bits,
            probes,
        }
    }

    fn positions(&self, key: u64) -> impl Iterator<Item = u32> + '_ {
        let h1 = splitmix64(key);
        let h2 = splitmix64(key ^ 0x9e37_79b9_7f4a_7c15) | 1;
        let mask = (self.bits - 1) as u64;
        (0..self.probes as u64).map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) & mask) as u32)
    }

    pub fn insert(&mut self, key: u64) {
        for bit in self.positions(key).collect::<Vec<_>>() {
            self.words[(bit / 64) as usize] |= 1u64 << (bit % 64);
        }
    }

    pub fn contains(&self, key: u64) -> bool {
        self.positions(key)
            .all(|bit| self.words[(bit / 64) as usize] & (1u64 << (bit % 64)) != 0)
    }

    pub fn clear(&mut self) {
        self.words.fill(0);
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn storage_bytes(&self) -> u64 {
        (self.bits / 8) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    Hit,
    Miss,
}

/// Predictor state for one cache set: front filter, back filter, and the
/// distinct-insertion counter that drives the swap.
#[derive(Debug, Clone)]
pub struct PredictorSet {
    bf1: BloomFilter,
    bf2: BloomFilter,
    n: u32,
}

impl PredictorSet {
    pub fn new(bits: u32, probes: u32) -> Self {
        Self {
            bf1: BloomFilter::new(bits, probes),
            bf2: BloomFilter::new(bits, probes),
            n: 0,
        }
    }

    pub fn with_defaults() -> Self {
        Self::new(DEFAULT_FILTER_BITS, DEFAULT_PROBES)
    }

    /// Read-only query against the front filter.
    pub fn predict(&self, block: u64) -> Prediction {
        if self.bf1.contains(block) {
            Prediction::Hit
        } else {
            Prediction::Miss
        }
    }

    /// Record that `block` was inserted into (or reused in) the tracked set,
    /// whose current associativity is `assoc`. Returns true when the filters
    /// swapped.
    pub fn record_access(&mut self, block: u64, assoc: u32) -> bool {
        let already_in_back = self.bf2.contains(block);
        self.bf1.insert(block);
        self.bf2.insert(block);
        if !already_in_back {
            // False positives in the membership test under-count n, which
            // only delays the swap; that is the safe direction.
            self.n += 1;
        }
        if assoc > 0 && self.n >= assoc {
            self.bf1.clear();
            std::mem::swap(&mut self.bf1, &mut self.bf2);
            self.n = 0;
            true
        } else {
            false
        }
    }

    /// Re-insert the set's current residents into the front filter. The swap
    /// logic guarantees residency coverage only while the tracked set evicts
    /// in strict global-LRU order; callers whose sets can evict out of LRU
    /// order (e.g. per-compression-level eviction) call this after each swap
    /// to keep predicted misses exact. For an LRU set it is a no-op, since
    /// the residents are already members of the promoted filter.
    pub fn reprime<I: IntoIterator<Item = u64>>(&mut self, residents: I) {
        for block in residents {
            self.bf1.insert(block);
        }
    }

    /// Distinct insertions the back filter has seen since its last reset.
    pub fn pending(&self) -> u32 {
        self.n
    }

    pub fn front(&self) -> &BloomFilter {
        &self.bf1
    }

    pub fn storage_bytes(&self) -> u64 {
        self.bf1.storage_bytes() + self.bf2.storage_bytes()
    }
}

/// Predictor SRAM for one controller partition tracking `sets` cache sets:
/// two 32-byte filters per set.
pub fn partition_storage_bytes(sets: u64) -> u64 {
    2 * (DEFAULT_FILTER_BITS as u64 / 8) * sets
}
