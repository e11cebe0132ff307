//! Request steering: splits the block-address space between the
//! conventional banks and the extended sets, and predicts extended-set
//! residency so true misses can skip straight to memory.
//!
//! Every LLC partition hosts a copy of the steering logic. A partition
//! serves the conventional sets congruent to its index and the extended
//! sets congruent to its index, so each extended set's status row and
//! filter pair live in exactly one partition.

use crate::bloom::{Prediction, PredictorSet};
use crate::ext_llc::{ExtendedLlc, ExtendedSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixed cost of the query/steering logic per partition: comparators,
/// request staging, and the warp-status table.
pub const QUERY_LOGIC_BYTES: u64 = 5120;

/// Status rows (and filter pairs) provisioned per partition, sized for the
/// largest supported extended configuration.
pub const PROVISIONED_ROWS: u64 = 256;

/// Two 256-bit filters per extended set.
pub const FILTER_PAIR_BYTES: u64 = 64;

/// Hardware added to one partition. Partitions only power the filter array
/// when extended sets exist.
pub fn partition_overhead_bytes(has_ext_sets: bool) -> u64 {
    QUERY_LOGIC_BYTES
        + if has_ext_sets {
            PROVISIONED_ROWS * FILTER_PAIR_BYTES
        } else {
            0
        }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ControllerError {
    #[error("{sets} extended sets over {partitions} partitions need {rows} status rows, but each partition provisions {PROVISIONED_ROWS}")]
    TooManyRows { sets: u32, partitions: u32, rows: u32 },
    #[error("partition count must be positive")]
    NoPartitions,
}

/// Distributes cache sets over LLC partitions by congruence class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionMap {
    partitions: u32,
}

impl PartitionMap {
    pub fn new(partitions: u32) -> Result<Self, ControllerError> {
        if partitions == 0 {
            return Err(ControllerError::NoPartitions);
        }
        Ok(Self { partitions })
    }

    pub fn partitions(&self) -> u32 {
        self.partitions
    }

    pub fn conv_partition(&self, conv_set: u64) -> u32 {
        (conv_set % self.partitions as u64) as u32
    }

    pub fn ext_partition(&self, ext_set: u32) -> u32 {
        ext_set % self.partitions
    }

    /// Status rows one partition needs for `sets` extended sets.
    pub fn rows_required(&self, sets: u32) -> u32 {
        sets.div_ceil(self.partitions)
    }

    pub fn validate_rows(&self, sets: u32) -> Result<(), ControllerError> {
        let rows = self.rows_required(sets);
        if rows as u64 > PROVISIONED_ROWS {
            return Err(ControllerError::TooManyRows {
                sets,
                partitions: self.partitions,
                rows,
            });
        }
        Ok(())
    }
}

/// Splits block numbers between the two cache regions in proportion to
/// their capacities: of every `conv + ext` consecutive blocks, exactly
/// `conv` map to the conventional banks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressSeparator {
    conv_blocks: u64,
    ext_blocks: u64,
}

impl AddressSeparator {
    pub fn new(conv_blocks: u64, ext_blocks: u64) -> Self {
        debug_assert!(conv_blocks > 0);
        Self { conv_blocks, ext_blocks }
    }

    pub fn is_conventional(&self, block_number: u64) -> bool {
        self.ext_blocks == 0 || block_number % (self.conv_blocks + self.ext_blocks) < self.conv_blocks
    }

    pub fn conv_share(&self) -> f64 {
        self.conv_blocks as f64 / (self.conv_blocks + self.ext_blocks) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorMode {
    /// No prediction: every extended-region request is forwarded.
    Off,
    /// Paired rotating filters answer from the partition, without touching
    /// the remote set.
    Bloom,
    /// Consults actual residency; the upper bound a real predictor chases.
    Perfect,
}

/// Where one request goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteDecision {
    Conventional,
    /// Ask the owning warp; it may still miss.
    ExtendedForward { set: u32 },
    /// Filter says absent: serve from memory and install in the background.
    PredictedMiss { set: u32 },
}

/// Prediction quality, judged against actual residency at decision time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorStats {
    pub true_positives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    /// Predicted absent while resident. Must stay zero: a false negative
    /// would let a memory-side write race a dirty cached copy.
    pub false_negatives: u64,
    pub filter_swaps: u64,
    /// Residency checks made in perfect mode.
    pub perfect_hits: u64,
    pub perfect_misses: u64,
}

impl PredictorStats {
    pub fn predictions(&self) -> u64 {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }

    pub fn false_positive_rate(&self) -> f64 {
        let absent = self.false_positives + self.true_negatives;
        if absent == 0 {
            0.0
        } else {
            self.false_positives as f64 / absent as f64
        }
    }
}

/// Per-partition steering state, folded over all partitions. Routing is a
/// pure function of the separator, the per-set filters, and (in perfect
/// mode) the sets themselves.
#[derive(Debug, Clone)]
pub struct Router {
    mode: PredictorMode,
    separator: AddressSeparator,
    /// One filter pair per extended set, bloom mode only.
    predictors: Vec<PredictorSet>,
    /// Reprime filters from the tag array after a swap; required when
    /// compression constrains eviction order.
    reprime_after_swap: bool,
    pub stats: PredictorStats,
}

impl Router {
    pub fn new(
        mode: PredictorMode,
        separator: AddressSeparator,
        ext_sets: u32,
        filter_bits: u32,
        filter_probes: u32,
        reprime_after_swap: bool,
    ) -> Self {
        let predictors = if mode == PredictorMode::Bloom {
            (0..ext_sets)
                .map(|_| PredictorSet::new(filter_bits, filter_probes))
                .collect()
        } else {
            Vec::new()
        };
        Self {
            mode,
            separator,
            predictors,
            reprime_after_swap,
            stats: PredictorStats::default(),
        }
    }

    pub fn mode(&self) -> PredictorMode {
        self.mode
    }

    pub fn separator(&self) -> &AddressSeparator {
        &self.separator
    }

    pub fn route(&mut self, block_number: u64, ext: &ExtendedLlc) -> RouteDecision {
        if ext.is_empty() || self.separator.is_conventional(block_number) {
            return RouteDecision::Conventional;
        }
        let set = ext.set_of_block(block_number);
        match self.mode {
            PredictorMode::Off => RouteDecision::ExtendedForward { set },
            PredictorMode::Perfect => {
                if ext.set(set).peek(block_number) {
                    self.stats.perfect_hits += 1;
                    RouteDecision::ExtendedForward { set }
                } else {
                    self.stats.perfect_misses += 1;
                    RouteDecision::PredictedMiss { set }
                }
            }
            PredictorMode::Bloom => {
                let resident = ext.set(set).peek(block_number);
                match self.predictors[set as usize].predict(block_number) {
                    Prediction::Hit => {
                        if resident {
                            self.stats.true_positives += 1;
                        } else {
                            self.stats.false_positives += 1;
                        }
                        RouteDecision::ExtendedForward { set }
                    }
                    Prediction::Miss => {
                        if resident {
                            // Mirrors what the hardware would do: the request
                            // bypasses a live copy. The run is declared invalid
                            // when results are finalized.
                            self.stats.false_negatives += 1;
                        } else {
                            self.stats.true_negatives += 1;
                        }
                        RouteDecision::PredictedMiss { set }
                    }
                }
            }
        }
    }

    /// Feeds the filters after an access left `block_number` resident in
    /// `set`. No-op outside bloom mode.
    pub fn record_access(&mut self, set: u32, block_number: u64, set_state: &ExtendedSet) {
        if self.mode != PredictorMode::Bloom {
            return;
        }
        let predictor = &mut self.predictors[set as usize];
        if predictor.record_access(block_number, set_state.effective_capacity()) {
            self.stats.filter_swaps += 1;
            if self.reprime_after_swap {
                predictor.reprime(set_state.resident_tags());
            }
        }
    }

    /// Live filter storage across `partitions`, by the per-set formula.
    pub fn filter_bytes(&self) -> u64 {
        self.predictors.iter().map(|p| p.storage_bytes()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ext_llc::{ExtGeometry, FillOutcome, SetHash, DEFAULT_AUX_RESERVE};
    use crate::memory::MainMemory;
    use crate::trace::{MemoryRequest, Op};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn separator_is_exactly_proportional() {
        let sep = AddressSeparator::new(10, 6);
        // Any window of 16 consecutive blocks sends exactly 10 conventional.
        for start in [0u64, 16, 800, 1_000_000] {
            let conv = (start..start + 16).filter(|&b| sep.is_conventional(b)).count();
            assert_eq!(conv, 10);
        }
        let conv_over_window = (0..16_000).filter(|&b| sep.is_conventional(b)).count();
        assert_eq!(conv_over_window, 10_000);
        assert!((sep.conv_share() - 0.625).abs() < 1e-12);
    }

    #[test]
    fn separator_with_no_extended_blocks_keeps_everything_conventional() {
        let sep = AddressSeparator::new(40_960, 0);
        for b in 0..100_000 {
            assert!(sep.is_conventional(b));
        }
    }

    #[test]
    fn partition_map_splits_sets_by_congruence() {
        let pm = PartitionMap::new(10).unwrap();
        assert_eq!(pm.conv_partition(0), 0);
        assert_eq!(pm.conv_partition(2559), 9);
        assert_eq!(pm.ext_partition(815), 5);
        assert_eq!(pm.rows_required(2560), 256);
        assert!(pm.validate_rows(2560).is_ok());
        let err = pm.validate_rows(2561).unwrap_err();
        assert_eq!(
            err,
            ControllerError::TooManyRows { sets: 2561, partitions: 10, rows: 257 }
        );
        assert_eq!(PartitionMap::new(0), Err(ControllerError::NoPartitions));
    }

    #[test]
    fn per_partition_overhead_totals() {
        assert_eq!(partition_overhead_bytes(true), 21_504);
        assert_eq!(partition_overhead_bytes(false), 5_120);
        assert_eq!(10 * partition_overhead_bytes(true), 215_040);
    }

    fn small_llc(compression: bool) -> ExtendedLlc {
        let g = ExtGeometry {
            cache_mode_sms: vec![6, 7],
            warps_per_sm: 8,
            rf_warps: 4,
            l1_warps: 4,
            rf_bytes_per_sm: 256 * 1024,
            l1_bytes_per_sm: 4 * 4 * 128, // 4 blocks per L1 set
            rf_blocks_override: Some(4),
            aux_reserve: DEFAULT_AUX_RESERVE.to_vec(),
            set_hash: SetHash::Identity,
        };
        ExtendedLlc::new(g, compression).unwrap()
    }

    fn read(id: u64, block: u64) -> MemoryRequest {
        MemoryRequest {
            id,
            issue_cycle: 0,
            origin_sm: 0,
            op: Op::Read,
            address: block * 128,
            size: 4,
            operands: vec![],
        }
    }

    #[test]
    fn off_mode_forwards_every_extended_request() {
        let llc = small_llc(false);
        let sep = AddressSeparator::new(4, 60);
        let mut router = Router::new(PredictorMode::Off, sep, llc.set_count(), 256, 4, false);
        let mut forwards = 0;
        for b in 0..640 {
            match router.route(b, &llc) {
                RouteDecision::Conventional => assert!(b % 64 < 4),
                RouteDecision::ExtendedForward { .. } => forwards += 1,
                RouteDecision::PredictedMiss { .. } => panic!("off mode never predicts"),
            }
        }
        assert_eq!(forwards, 600);
        assert_eq!(router.stats.predictions(), 0);
    }

    #[test]
    fn bloom_mode_learns_residency() {
        let mut llc = small_llc(false);
        let mut mem = MainMemory::new();
        let sep = AddressSeparator::new(1, u64::MAX / 2); // essentially everything extended
        let mut router = Router::new(PredictorMode::Bloom, sep, llc.set_count(), 256, 4, false);

        let block = 17u64;
        // Cold: filter empty, predicted miss, truly absent.
        let d = router.route(block, &llc);
        let set = match d {
            RouteDecision::PredictedMiss { set } => set,
            other => panic!("expected predicted miss, got {other:?}"),
        };
        assert_eq!(router.stats.true_negatives, 1);
        // Memory served it; the background fill installs and records it.
        assert_eq!(llc.set_mut(set).fill(block, &mut mem).outcome, FillOutcome::Stored);
        router.record_access(set, block, llc.set(set));
        // Warm: predicted hit, truly present.
        match router.route(block, &llc) {
            RouteDecision::ExtendedForward { set: s } => assert_eq!(s, set),
            other => panic!("expected forward, got {other:?}"),
        }
        assert_eq!(router.stats.true_positives, 1);
        assert_eq!(router.stats.false_negatives, 0);
    }

    #[test]
    fn perfect_mode_tracks_actual_residency() {
        let mut llc = small_llc(false);
        let mut mem = MainMemory::new();
        let sep = AddressSeparator::new(1, u64::MAX / 2);
        let mut router = Router::new(PredictorMode::Perfect, sep, llc.set_count(), 256, 4, false);
        let block = 33u64;
        assert!(matches!(router.route(block, &llc), RouteDecision::PredictedMiss { .. }));
        let set = llc.set_of_block(block);
        llc.set_mut(set).fill(block, &mut mem);
        assert!(matches!(router.route(block, &llc), RouteDecision::ExtendedForward { .. }));
        assert_eq!(router.stats.perfect_misses, 1);
        assert_eq!(router.stats.perfect_hits, 1);
        assert_eq!(router.filter_bytes(), 0, "perfect mode keeps no filters");
    }

    /// Drives routing, servicing, fills, and recording the way the engine
    /// does, and checks the no-false-negative invariant end to end.
    fn churn(compression: bool, seed: u64) -> PredictorStats {
        let mut llc = small_llc(compression);
        let mut mem = MainMemory::new();
        let sep = AddressSeparator::new(1, u64::MAX / 2);
        let mut router = Router::new(PredictorMode::Bloom, sep, llc.set_count(), 256, 4, compression);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        // Footprint ~4x the 64-block extended capacity keeps sets churning.
        for id in 0..60_000u64 {
            let block = 1 + rng.gen_range(0..257u64); // skip the conventional residue 0
            let op = if rng.gen_bool(0.3) { Op::Write } else { Op::Read };
            let req = MemoryRequest { op, ..read(id, block) };
            match router.route(block, &llc) {
                RouteDecision::Conventional => unreachable!("blocks chosen extended"),
                RouteDecision::ExtendedForward { set } => {
                    let s = llc.set_mut(set).service(&req, &mut mem);
                    if s.resident_after {
                        router.record_access(set, block, llc.set(set));
                    }
                }
                RouteDecision::PredictedMiss { set } => {
                    // Memory-side service, then background fill.
                    let mut raw = mem.read_block(block);
                    if crate::memory::apply_request(&req, &mut raw).mutated {
                        mem.write_block(block, raw);
                    }
                    if llc.set_mut(set).fill(block, &mut mem).outcome == FillOutcome::Stored {
                        router.record_access(set, block, llc.set(set));
                    }
                }
            }
            if compression && id % 500 == 499 {
                llc.epoch_update_all(&mut mem);
            }
        }
        router.stats
    }

    #[test]
    fn bloom_routing_never_false_negatives_under_churn() {
        let stats = churn(false, 5);
        assert_eq!(stats.false_negatives, 0);
        assert!(stats.filter_swaps > 50, "swaps {}", stats.filter_swaps);
        assert!(stats.true_positives > 1000);
        assert!(stats.true_negatives > 1000);
    }

    #[test]
    fn bloom_routing_never_false_negatives_with_compression_epochs() {
        let stats = churn(true, 6);
        assert_eq!(stats.false_negatives, 0);
        assert!(stats.filter_swaps > 50);
    }
}
