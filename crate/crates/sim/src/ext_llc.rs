//! The extended cache region: fully associative sets carved out of
//! cache-mode SMs' register files and L1 arrays.
//!
//! Each cache-mode SM contributes one set per helper warp. A set backed by
//! the register file holds the blocks that fit in that warp's register
//! budget after a small reservation for the helper kernel's own state; a
//! set backed by the L1 holds an equal slice of the L1 array. Sets use the
//! same saturating-counter replacement as the conventional banks, but are
//! fully associative and may compress their contents to raise effective
//! capacity.

use crate::cache_core::LRU_MAX;
use crate::compression::{
    classify, compress, decompress, reapportion, shrink_requirements, CompressedBlock,
    EpochCounters, Level, LevelAllocation,
};
use crate::memory::{apply_request, word_at, MainMemory};
use crate::trace::MemoryRequest;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which physical array a set lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Backing {
    RegisterFile,
    L1,
}

/// How block numbers spread over extended sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetHash {
    /// `block mod set_count`; preserves spatial adjacency across sets.
    Identity,
    /// splitmix64 of the block number first; decorrelates strided patterns.
    Mixed,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtError {
    #[error("cache-mode SMs need at least one helper warp per SM")]
    NoWarps,
    #[error("register-file and L1 warps ({0}) exceed warps per SM ({1})")]
    WarpSplit(u32, u32),
    #[error("register file of {rf_bytes} B leaves no blocks per set for {warps} warps (reservation {reserved} registers)")]
    NoRfCapacity { rf_bytes: u64, warps: u32, reserved: u32 },
    #[error("L1 of {l1_bytes} B leaves no blocks per set for {warps} warps")]
    NoL1Capacity { l1_bytes: u64, warps: u32 },
    #[error("register-file override of {0} blocks per set exceeds the physical {1} registers per warp")]
    OverrideTooLarge(u32, u32),
    #[error("reservation table must have an entry for {0} or fewer warps")]
    ReserveTableGap(u32),
}

/// Registers are warp-wide: 32 lanes of 4 bytes, so one register holds
/// exactly one 128-byte cache block.
pub const REGISTER_BYTES: u64 = 128;

/// Architectural ceiling on registers addressable by one warp.
pub const MAX_REGS_PER_WARP: u32 = 256;

/// Default per-warp register reservation for the helper kernel itself
/// (loop state, request staging, tag scratch), keyed by helper-warp count.
/// Fewer warps leave each warp a larger share of the bookkeeping.
pub const DEFAULT_AUX_RESERVE: [(u32, u32); 5] = [(1, 17), (8, 17), (16, 15), (32, 14), (48, 10)];

/// Static shape of the extended region.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtGeometry {
    /// Physical SM ids operating in cache mode.
    pub cache_mode_sms: Vec<u32>,
    /// Helper warps resident per cache-mode SM; each warp owns one set.
    pub warps_per_sm: u32,
    /// Of those, how many serve register-file-backed sets.
    pub rf_warps: u32,
    /// How many serve L1-backed sets.
    pub l1_warps: u32,
    pub rf_bytes_per_sm: u64,
    pub l1_bytes_per_sm: u64,
    /// Overrides the derived register-file blocks per set when present.
    pub rf_blocks_override: Option<u32>,
    /// `(warps, reserved_registers)` pairs, ascending; the entry with the
    /// largest key not exceeding `rf_warps` applies.
    pub aux_reserve: Vec<(u32, u32)>,
    pub set_hash: SetHash,
}

impl ExtGeometry {
    /// Sets contributed by each cache-mode SM.
    pub fn warps_used(&self) -> u32 {
        self.rf_warps + self.l1_warps
    }

    pub fn set_count(&self) -> u32 {
        self.cache_mode_sms.len() as u32 * self.warps_used()
    }

    fn reserved_registers(&self) -> Result<u32, ExtError> {
        self.aux_reserve
            .iter()
            .filter(|(w, _)| *w <= self.rf_warps)
            .max_by_key(|(w, _)| *w)
            .map(|(_, r)| *r)
            .ok_or(ExtError::ReserveTableGap(self.rf_warps))
    }

    /// Blocks held by one register-file-backed set: the warp's register
    /// share, minus the helper kernel's own reservation.
    pub fn rf_blocks_per_set(&self) -> Result<u32, ExtError> {
        if self.rf_warps == 0 {
            return Ok(0);
        }
        let regs_per_sm = (self.rf_bytes_per_sm / REGISTER_BYTES) as u32;
        let regs_per_warp = (regs_per_sm / self.rf_warps).min(MAX_REGS_PER_WARP);
        if let Some(n) = self.rf_blocks_override {
            if n > regs_per_warp {
                return Err(ExtError::OverrideTooLarge(n, regs_per_warp));
            }
            return Ok(n);
        }
        let reserved = self.reserved_registers()?;
        match regs_per_warp.checked_sub(reserved) {
            Some(n) if n > 0 => Ok(n),
            _ => Err(ExtError::NoRfCapacity {
                rf_bytes: self.rf_bytes_per_sm,
                warps: self.rf_warps,
                reserved,
            }),
        }
    }

    /// Blocks held by one L1-backed set: an equal slice of the L1 array.
    pub fn l1_blocks_per_set(&self) -> Result<u32, ExtError> {
        if self.l1_warps == 0 {
            return Ok(0);
        }
        let blocks = self.l1_bytes_per_sm / (self.l1_warps as u64 * REGISTER_BYTES);
        if blocks == 0 {
            return Err(ExtError::NoL1Capacity {
                l1_bytes: self.l1_bytes_per_sm,
                warps: self.l1_warps,
            });
        }
        Ok(blocks as u32)
    }

    pub fn validate(&self) -> Result<(), ExtError> {
        if self.cache_mode_sms.is_empty() {
            return Ok(());
        }
        if self.warps_used() == 0 {
            return Err(ExtError::NoWarps);
        }
        if self.warps_used() > self.warps_per_sm {
            return Err(ExtError::WarpSplit(self.warps_used(), self.warps_per_sm));
        }
        self.rf_blocks_per_set()?;
        self.l1_blocks_per_set()?;
        Ok(())
    }

    /// Backing array and block count for a warp index within an SM. The
    /// first `rf_warps` warps hold register-file sets.
    pub fn warp_shape(&self, warp: u32) -> (Backing, u32) {
        debug_assert!(warp < self.warps_used());
        if warp < self.rf_warps {
            (Backing::RegisterFile, self.rf_blocks_per_set().expect("validated"))
        } else {
            (Backing::L1, self.l1_blocks_per_set().expect("validated"))
        }
    }

    /// `(sm_id, warp)` owning a global set index.
    pub fn owner(&self, set: u32) -> (u32, u32) {
        let per_sm = self.warps_used();
        let sm_slot = (set / per_sm) as usize;
        (self.cache_mode_sms[sm_slot], set % per_sm)
    }

    pub fn set_of_block(&self, block_number: u64) -> u32 {
        let e = self.set_count() as u64;
        debug_assert!(e > 0);
        let key = match self.set_hash {
            SetHash::Identity => block_number,
            SetHash::Mixed => crate::bloom::splitmix64(block_number),
        };
        (key % e) as u32
    }

    /// Total blocks across all extended sets, uncompressed.
    pub fn capacity_blocks(&self) -> u64 {
        if self.cache_mode_sms.is_empty() {
            return 0;
        }
        let rf = self.rf_warps as u64 * self.rf_blocks_per_set().expect("validated") as u64;
        let l1 = self.l1_warps as u64 * self.l1_blocks_per_set().expect("validated") as u64;
        self.cache_mode_sms.len() as u64 * (rf + l1)
    }

    pub fn capacity_summary(&self) -> CapacitySummary {
        let sm_count = self.cache_mode_sms.len() as u32;
        let (rf_blocks, l1_blocks) = if sm_count == 0 {
            (0, 0)
        } else {
            (
                self.rf_blocks_per_set().expect("validated"),
                self.l1_blocks_per_set().expect("validated"),
            )
        };
        let rf_bytes = self.rf_warps as u64 * rf_blocks as u64 * REGISTER_BYTES;
        let l1_bytes = self.l1_warps as u64 * l1_blocks as u64 * REGISTER_BYTES;
        CapacitySummary {
            cache_mode_sm_count: sm_count,
            sets_per_sm: if sm_count == 0 { 0 } else { self.warps_used() },
            set_count: self.set_count(),
            rf_blocks_per_set: rf_blocks,
            l1_blocks_per_set: l1_blocks,
            rf_usable_bytes_per_sm: rf_bytes,
            l1_usable_bytes_per_sm: l1_bytes,
            usable_bytes_per_sm: rf_bytes + l1_bytes,
            total_blocks: self.capacity_blocks(),
            total_bytes: self.capacity_blocks() * REGISTER_BYTES,
        }
    }
}

/// Usable extended capacity, reported alongside simulation results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacitySummary {
    pub cache_mode_sm_count: u32,
    pub sets_per_sm: u32,
    pub set_count: u32,
    pub rf_blocks_per_set: u32,
    pub l1_blocks_per_set: u32,
    pub rf_usable_bytes_per_sm: u64,
    pub l1_usable_bytes_per_sm: u64,
    pub usable_bytes_per_sm: u64,
    pub total_blocks: u64,
    pub total_bytes: u64,
}

#[derive(Debug, Clone)]
struct Resident {
    tag: u64,
    dirty: bool,
    lru: u16,
    /// Level of the storage frame slice occupied (may be looser than the
    /// payload's own level).
    frame: Level,
    /// Canonical encoding at the payload's tightest level.
    data: CompressedBlock,
}

/// What one request's pass through a set did, for the engine to charge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServiceSummary {
    pub hit: bool,
    /// Block is resident once the access completes; feeds the predictor.
    pub resident_after: bool,
    /// Served without caching: either no adequate frame class is allocated,
    /// or a rewrite outgrew every allocated class.
    pub bypassed: bool,
    /// Rewrite moved the block to a roomier frame class.
    pub relocated: bool,
    /// Rewrite outgrew the set: written through and invalidated.
    pub rewrite_dropped: bool,
    /// 128-byte reads from main memory.
    pub dram_reads: u32,
    /// 128-byte writes to main memory (dirty evictions, write-throughs).
    pub dram_writes: u32,
    /// Of those writes, dirty victims flushed by eviction.
    pub victim_writebacks: u32,
    /// Data moved through a register-file frame, which costs extra latency
    /// when indirect register addressing is emulated in software.
    pub rf_data_access: bool,
    /// Prior word, for atomics.
    pub old_value: Option<u32>,
    /// Word at the request offset after the operation.
    pub value_after: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillOutcome {
    Stored,
    AlreadyPresent,
    Bypassed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FillSummary {
    pub outcome: FillOutcome,
    pub dram_writes: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpochSummary {
    pub reallocated: bool,
    pub evicted: u32,
    pub dram_writes: u32,
}

enum Placed {
    Stored { victim: Option<Resident> },
    NoRoom,
}

/// One fully associative extended set.
#[derive(Debug, Clone)]
pub struct ExtendedSet {
    backing: Backing,
    frames: u32,
    compression: bool,
    alloc: LevelAllocation,
    residents: Vec<Resident>,
    epoch: EpochCounters,
}

impl ExtendedSet {
    pub fn new(backing: Backing, frames: u32, compression: bool) -> Self {
        Self {
            backing,
            frames,
            compression,
            alloc: LevelAllocation::all_uncompressed(frames),
            residents: Vec::new(),
            epoch: EpochCounters::default(),
        }
    }

    pub fn backing(&self) -> Backing {
        self.backing
    }

    pub fn frames(&self) -> u32 {
        self.frames
    }

    pub fn allocation(&self) -> &LevelAllocation {
        &self.alloc
    }

    /// Blocks the set can hold under the current frame split.
    pub fn effective_capacity(&self) -> u32 {
        self.alloc.effective_blocks()
    }

    pub fn resident_count(&self) -> u32 {
        self.residents.len() as u32
    }

    pub fn resident_tags(&self) -> impl Iterator<Item = u64> + '_ {
        self.residents.iter().map(|r| r.tag)
    }

    pub fn peek(&self, block_number: u64) -> bool {
        self.find(block_number).is_some()
    }

    pub fn is_dirty(&self, block_number: u64) -> Option<bool> {
        self.find(block_number).map(|i| self.residents[i].dirty)
    }

    fn find(&self, tag: u64) -> Option<usize> {
        self.residents.iter().position(|r| r.tag == tag)
    }

    fn occupied_by_level(&self) -> [u32; 3] {
        let mut o = [0u32; 3];
        for r in &self.residents {
            o[r.frame.index()] += 1;
        }
        o
    }

    fn touch(&mut self, idx: usize) {
        for (i, r) in self.residents.iter_mut().enumerate() {
            if i == idx {
                r.lru = LRU_MAX;
            } else {
                r.lru = r.lru.saturating_sub(1);
            }
        }
    }

    /// Index of the least-recently-used resident whose frame level passes
    /// `keep`; first match wins ties, matching the way-ordered scan of the
    /// conventional banks.
    fn lru_victim(&self, eligible: impl Fn(Level) -> bool) -> Option<usize> {
        self.residents
            .iter()
            .enumerate()
            .filter(|(_, r)| eligible(r.frame))
            .min_by_key(|(i, r)| (r.lru, *i))
            .map(|(i, _)| i)
    }

    fn place(&mut self, tag: u64, data: CompressedBlock, dirty: bool) -> Placed {
        let class = data.level;
        let occupied = self.occupied_by_level();
        let adequate: Vec<Level> = Level::ALL
            .into_iter()
            .filter(|&l| class.fits_in(l) && self.alloc.slots(l) > 0)
            .collect();
        if adequate.is_empty() {
            return Placed::NoRoom;
        }
        let free = adequate
            .iter()
            .copied()
            .find(|&l| occupied[l.index()] < self.alloc.block_capacity(l));
        let (frame, victim) = match free {
            Some(level) => (level, None),
            None => {
                let vi = self
                    .lru_victim(|l| adequate.contains(&l))
                    .expect("full allocated levels hold at least one resident");
                let v = self.residents.remove(vi);
                (v.frame, Some(v))
            }
        };
        self.residents.push(Resident {
            tag,
            dirty,
            lru: 0,
            frame,
            data,
        });
        let idx = self.residents.len() - 1;
        self.touch(idx);
        Placed::Stored { victim }
    }

    /// Flushes a dirty victim to memory; returns the write transfers (0/1).
    fn write_back(victim: Resident, mem: &mut MainMemory) -> u32 {
        if victim.dirty {
            let raw = decompress(&victim.data).expect("stored payloads are well formed");
            mem.write_block(victim.tag, raw);
            1
        } else {
            0
        }
    }

    /// Serves one forwarded request, moving data between this set and main
    /// memory as needed. All functional effects happen here, in call order.
    pub fn service(&mut self, req: &MemoryRequest, mem: &mut MainMemory) -> ServiceSummary {
        let block = req.block_number();
        let mut s = ServiceSummary::default();
        if let Some(idx) = self.find(block) {
            s.hit = true;
            s.rf_data_access = self.backing == Backing::RegisterFile;
            self.touch(idx);
            let mut raw = decompress(&self.residents[idx].data).expect("stored payloads are well formed");
            let apply = apply_request(req, &mut raw);
            s.old_value = apply.old_value;
            s.value_after = word_at(&raw, req.block_offset());
            if apply.mutated {
                let class = classify(&raw).expect("blocks are 128 bytes");
                if self.compression {
                    self.epoch.observe(class);
                }
                let data = compress(&raw).expect("blocks are 128 bytes");
                if class.fits_in(self.residents[idx].frame) {
                    let r = &mut self.residents[idx];
                    r.data = data;
                    r.dirty = true;
                } else {
                    // The rewrite no longer fits its frame class: move it to
                    // a roomier class, or fail over to memory.
                    self.residents.remove(idx);
                    match self.place(block, data, true) {
                        Placed::Stored { victim } => {
                            s.relocated = true;
                            if let Some(v) = victim {
                                let n = Self::write_back(v, mem);
                                s.dram_writes += n;
                                s.victim_writebacks += n;
                            }
                        }
                        Placed::NoRoom => {
                            mem.write_block(block, raw);
                            s.dram_writes += 1;
                            s.rewrite_dropped = true;
                            s.bypassed = true;
                        }
                    }
                }
            }
        } else {
            let mut raw = mem.read_block(block);
            s.dram_reads += 1;
            let apply = apply_request(req, &mut raw);
            s.old_value = apply.old_value;
            s.value_after = word_at(&raw, req.block_offset());
            let class = classify(&raw).expect("blocks are 128 bytes");
            if self.compression {
                self.epoch.observe(class);
            }
            let data = compress(&raw).expect("blocks are 128 bytes");
            match self.place(block, data, apply.mutated) {
                Placed::Stored { victim } => {
                    s.rf_data_access = self.backing == Backing::RegisterFile;
                    if let Some(v) = victim {
                        let n = Self::write_back(v, mem);
                        s.dram_writes += n;
                        s.victim_writebacks += n;
                    }
                }
                Placed::NoRoom => {
                    s.bypassed = true;
                    if apply.mutated {
                        mem.write_block(block, raw);
                        s.dram_writes += 1;
                    }
                }
            }
        }
        s.resident_after = self.peek(block);
        self.debug_check();
        s
    }

    /// Installs a block after a predicted-miss response. Reads the current
    /// memory image so a fill can never resurrect stale data, and never
    /// replaces an existing resident, which may be dirtier than memory.
    pub fn fill(&mut self, block_number: u64, mem: &mut MainMemory) -> FillSummary {
        if self.find(block_number).is_some() {
            return FillSummary {
                outcome: FillOutcome::AlreadyPresent,
                dram_writes: 0,
            };
        }
        let raw = mem.read_block(block_number);
        let class = classify(&raw).expect("blocks are 128 bytes");
        if self.compression {
            self.epoch.observe(class);
        }
        let data = compress(&raw).expect("blocks are 128 bytes");
        let mut dram_writes = 0;
        let outcome = match self.place(block_number, data, false) {
            Placed::Stored { victim } => {
                if let Some(v) = victim {
                    dram_writes += Self::write_back(v, mem);
                }
                FillOutcome::Stored
            }
            Placed::NoRoom => FillOutcome::Bypassed,
        };
        self.debug_check();
        FillSummary { outcome, dram_writes }
    }

    /// Applies one compression epoch: re-divides frames among levels in
    /// proportion to the classes seen since the last epoch, evicting
    /// just enough blocks from any level that shrank. Blocks never migrate
    /// between levels here; only demand does.
    pub fn epoch_update(&mut self, mem: &mut MainMemory) -> EpochSummary {
        let mut summary = EpochSummary::default();
        if !self.compression {
            return summary;
        }
        if let Some(new_alloc) = reapportion(&self.epoch, self.frames) {
            let need = shrink_requirements(self.occupied_by_level(), &new_alloc);
            for (li, &n) in need.iter().enumerate() {
                let level = Level::ALL[li];
                for _ in 0..n {
                    let vi = self
                        .lru_victim(|l| l == level)
                        .expect("shrink never exceeds occupancy");
                    let v = self.residents.remove(vi);
                    summary.dram_writes += Self::write_back(v, mem);
                    summary.evicted += 1;
                }
            }
            self.alloc = new_alloc;
            summary.reallocated = true;
        }
        self.epoch.reset();
        self.debug_check();
        summary
    }

    fn debug_check(&self) {
        #[cfg(debug_assertions)]
        {
            let occupied = self.occupied_by_level();
            for l in Level::ALL {
                assert!(
                    occupied[l.index()] <= self.alloc.block_capacity(l),
                    "level {l:?} over capacity"
                );
            }
            for r in &self.residents {
                assert!(r.data.level.fits_in(r.frame), "payload too large for frame");
            }
            let mut tags: Vec<u64> = self.residents.iter().map(|r| r.tag).collect();
            tags.sort_unstable();
            tags.dedup();
            assert_eq!(tags.len(), self.residents.len(), "duplicate resident tags");
            assert_eq!(self.alloc.total_slots(), self.frames, "frame count drifted");
        }
    }
}

/// All extended sets plus the geometry that shaped them.
#[derive(Debug, Clone)]
pub struct ExtendedLlc {
    geometry: ExtGeometry,
    sets: Vec<ExtendedSet>,
}

impl ExtendedLlc {
    pub fn new(geometry: ExtGeometry, compression: bool) -> Result<Self, ExtError> {
        geometry.validate()?;
        let mut sets = Vec::with_capacity(geometry.set_count() as usize);
        for set in 0..geometry.set_count() {
            let (_, warp) = geometry.owner(set);
            let (backing, frames) = geometry.warp_shape(warp);
            sets.push(ExtendedSet::new(backing, frames, compression));
        }
        Ok(Self { geometry, sets })
    }

    pub fn geometry(&self) -> &ExtGeometry {
        &self.geometry
    }

    pub fn set_count(&self) -> u32 {
        self.sets.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn set_of_block(&self, block_number: u64) -> u32 {
        self.geometry.set_of_block(block_number)
    }

    pub fn set(&self, id: u32) -> &ExtendedSet {
        &self.sets[id as usize]
    }

    pub fn set_mut(&mut self, id: u32) -> &mut ExtendedSet {
        &mut self.sets[id as usize]
    }

    pub fn sets(&self) -> &[ExtendedSet] {
        &self.sets
    }

    pub fn epoch_update_all(&mut self, mem: &mut MainMemory) -> EpochSummary {
        let mut total = EpochSummary::default();
        for set in &mut self.sets {
            let s = set.epoch_update(mem);
            total.reallocated |= s.reallocated;
            total.evicted += s.evicted;
            total.dram_writes += s.dram_writes;
        }
        total
    }

    pub fn resident_blocks(&self) -> u64 {
        self.sets.iter().map(|s| s.resident_count() as u64).sum()
    }
}
