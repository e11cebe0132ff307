//! Base-delta block codec and epoch-based slot apportionment.
//!
//! A 128-byte block is viewed as 32 little-endian 4-byte segments. Segment 0
//! is the base; the block compresses to the tightest level whose signed
//! two's-complement deltas hold every segment: 1-byte deltas (32 B payload),
//! 2-byte deltas (64 B payload), or uncompressed (128 B). The wrapping
//! arithmetic makes ascending and descending runs compress symmetrically.
//!
//! Storage slots in a register-file-backed set are periodically re-divided
//! among the three levels in proportion to the traffic observed during the
//! last epoch, using largest-remainder apportionment so no slot is lost.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BLOCK_LEN: usize = 128;
pub const SEGMENT_BYTES: usize = 4;
pub const SEGMENTS: usize = BLOCK_LEN / SEGMENT_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    High,
    Low,
    Uncompressed,
}

impl Level {
    pub fn payload_bytes(self) -> usize {
        match self {
            Level::High => 32,
            Level::Low => 64,
            Level::Uncompressed => BLOCK_LEN,
        }
    }

    /// Blocks that fit in one 128-byte storage slot at this level.
    pub fn blocks_per_slot(self) -> u32 {
        match self {
            Level::High => 4,
            Level::Low => 2,
            Level::Uncompressed => 1,
        }
    }

    pub const ALL: [Level; 3] = [Level::High, Level::Low, Level::Uncompressed];

    pub fn index(self) -> usize {
        match self {
            Level::High => 0,
            Level::Low => 1,
            Level::Uncompressed => 2,
        }
    }

    /// True when a block compressed at `self` fits in a slot of `slot` level.
    pub fn fits_in(self, slot: Level) -> bool {
        self.payload_bytes() <= slot.payload_bytes()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("block must be {BLOCK_LEN} bytes, got {0}")]
    WrongLength(usize),
    #[error("payload malformed for level {level:?}: expected {expected} bytes, got {got}")]
    MalformedPayload {
        level: Level,
        expected: usize,
        got: usize,
    },
}

/// Compressed form of one block. The base segment is stored out of band,
/// mirroring hardware that parks bases in spare metadata registers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedBlock {
    pub level: Level,
    pub base: u32,
    pub payload: Vec<u8>,
}

fn segments(block: &[u8]) -> [u32; SEGMENTS] {
    let mut segs = [0u32; SEGMENTS];
    for (i, chunk) in block.chunks_exact(SEGMENT_BYTES).enumerate() {
        segs[i] = u32::from_le_bytes(chunk.try_into().unwrap());
    }
    segs
}

/// Level the block would compress to, without building a payload.
pub fn classify(block: &[u8]) -> Result<Level, CodecError> {
    if block.len() != BLOCK_LEN {
        return Err(CodecError::WrongLength(block.len()));
    }
    let segs = segments(block);
    let base = segs[0];
    let mut level = Level::High;
    for &s in &segs {
        let d = s.wrapping_sub(base) as i32;
        if i8::try_from(d).is_ok() {
            continue;
        }
        if i16::try_from(d).is_ok() {
            level = Level::Low;
        } else {
            return Ok(Level::Uncompressed);
        }
    }
    Ok(level)
}

pub fn compress(block: &[u8]) -> Result<CompressedBlock, CodecError> {
    let level = classify(block)?;
    let segs = segments(block);
    let base = segs[0];
    let payload = match level {
        Level::High => segs
            .iter()
            .map(|&s| (s.wrapping_sub(base) as i32 as i8) as u8)
            .collect(),
        Level::Low => segs
            .iter()
            .flat_map(|&s| ((s.wrapping_sub(base) as i32 as i16) as u16).to_le_bytes())
            .collect(),
        Level::Uncompressed => block.to_vec(),
    };
    Ok(CompressedBlock {
        level,
        base,
        payload,
    })
}

pub fn decompress(cb: &CompressedBlock) -> Result<[u8; BLOCK_LEN], CodecError> {
    let expected = cb.level.payload_bytes();
    if cb.payload.len() != expected {
        return Err(CodecError::MalformedPayload {
            level: cb.level,
            expected,
            got: cb.payload.len(),
        });
    }
    let mut out = [0u8; BLOCK_LEN];
    match cb.level {
        Level::High => {
            for (i, &d) in cb.payload.iter().enumerate() {
                let seg = cb.base.wrapping_add(d as i8 as i32 as u32);
                out[i * 4..i * 4 + 4].copy_from_slice(&seg.to_le_bytes());
            }
        }
        Level::Low => {
            for i in 0..SEGMENTS {
                let d = i16::from_le_bytes([cb.payload[i * 2], cb.payload[i * 2 + 1]]);
                let seg = cb.base.wrapping_add(d as i32 as u32);
                out[i * 4..i * 4 + 4].copy_from_slice(&seg.to_le_bytes());
            }
        }
        Level::Uncompressed => out.copy_from_slice(&cb.payload),
    }
    Ok(out)
}

/// How a set's storage slots are divided among compression levels. A slot
/// holds 4 / 2 / 1 blocks at High / Low / Uncompressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelAllocation {
    pub high_slots: u32,
    pub low_slots: u32,
    pub unc_slots: u32,
}

impl LevelAllocation {
    pub fn all_uncompressed(slots: u32) -> Self {
        Self {
            high_slots: 0,
            low_slots: 0,
            unc_slots: slots,
        }
    }

    pub fn total_slots(&self) -> u32 {
        self.high_slots + self.low_slots + self.unc_slots
    }

    pub fn slots(&self, level: Level) -> u32 {
        match level {
            Level::High => self.high_slots,
            Level::Low => self.low_slots,
            Level::Uncompressed => self.unc_slots,
        }
    }

    /// Block capacity contributed by one level's slots.
    pub fn block_capacity(&self, level: Level) -> u32 {
        self.slots(level) * level.blocks_per_slot()
    }

    /// Total blocks the set can hold under this allocation.
    pub fn effective_blocks(&self) -> u32 {
        Level::ALL.iter().map(|&l| self.block_capacity(l)).sum()
    }
}

/// Traffic observed per level during the current epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpochCounters {
    pub high: u64,
    pub low: u64,
    pub unc: u64,
}

impl EpochCounters {
    pub fn observe(&mut self, level: Level) {
        match level {
            Level::High => self.high += 1,
            Level::Low => self.low += 1,
            Level::Uncompressed => self.unc += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.high + self.low + self.unc
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// Largest-remainder apportionment of `total_slots` proportional to the
/// epoch counters. Returns None when no traffic was observed (allocation
/// stays as it is). Remainder ties are broken High > Low > Uncompressed.
pub fn reapportion(counters: &EpochCounters, total_slots: u32) -> Option<LevelAllocation> {
    let total = counters.total();
    if total == 0 {
        return None;
    }
    let counts = [counters.high, counters.low, counters.unc];
    let mut slots = [0u32; 3];
    let mut rems = [0u128; 3];
    let mut assigned = 0u32;
    for i in 0..3 {
        let num = counts[i] as u128 * total_slots as u128;
        slots[i] = (num / total as u128) as u32;
        rems[i] = num % total as u128;
        assigned += slots[i];
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    let mut leftover = total_slots - assigned;
    for &i in &order {
        if leftover == 0 {
            break;
        }
        slots[i] += 1;
        leftover -= 1;
    }
    Some(LevelAllocation {
        high_slots: slots[0],
        low_slots: slots[1],
        unc_slots: slots[2],
    })
}

/// Per-level eviction counts needed to fit `occupied` blocks into `alloc`.
pub fn shrink_requirements(occupied: [u32; 3], alloc: &LevelAllocation) -> [u32; 3] {
    let mut out = [0u32; 3];
    for (i, &level) in Level::ALL.iter().enumerate() {
        out[i] = occupied[i].saturating_sub(alloc.block_capacity(level));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block_from_segments(segs: &[u32; SEGMENTS]) -> [u8; BLOCK_LEN] {
        let mut b = [0u8; BLOCK_LEN];
        for (i, s) in segs.iter().enumerate() {
            b[i * 4..i * 4 + 4].copy_from_slice(&s.to_le_bytes());
        }
        b
    }

    #[test]
    fn all_zero_block_is_high() {
        let b = [0u8; BLOCK_LEN];
        let cb = compress(&b).unwrap();
        assert_eq!(cb.level, Level::High);
        assert_eq!(cb.payload.len(), 32);
        assert_eq!(decompress(&cb).unwrap(), b);
    }

    #[test]
    fn small_ascending_run_is_high() {
        let segs: [u32; SEGMENTS] = std::array::from_fn(|i| 1000 + i as u32);
        let b = block_from_segments(&segs);
        let cb = compress(&b).unwrap();
        assert_eq!(cb.level, Level::High);
        assert_eq!(cb.base, 1000);
        assert_eq!(decompress(&cb).unwrap(), b);
    }

    #[test]
    fn descending_run_compresses_symmetrically() {
        let segs: [u32; SEGMENTS] = std::array::from_fn(|i| 5000 - i as u32);
        let b = block_from_segments(&segs);
        assert_eq!(compress(&b).unwrap().level, Level::High);
    }

    #[test]
    fn delta_boundaries() {
        let mk = |delta: i64| {
            let mut segs = [100_000u32; SEGMENTS];
            segs[17] = (100_000i64 + delta) as u32;
            block_from_segments(&segs)
        };
        assert_eq!(classify(&mk(127)).unwrap(), Level::High);
        assert_eq!(classify(&mk(-128)).unwrap(), Level::High);
        assert_eq!(classify(&mk(128)).unwrap(), Level::Low);
        assert_eq!(classify(&mk(-129)).unwrap(), Level::Low);
        assert_eq!(classify(&mk(32_767)).unwrap(), Level::Low);
        assert_eq!(classify(&mk(-32_768)).unwrap(), Level::Low);
        assert_eq!(classify(&mk(32_768)).unwrap(), Level::Uncompressed);
        assert_eq!(classify(&mk(-32_769)).unwrap(), Level::Uncompressed);
    }

    #[test]
    fn wide_spread_is_uncompressed_and_roundtrips() {
        let mut segs = [0u32; SEGMENTS];
        for (i, s) in segs.iter_mut().enumerate() {
            *s = (i as u32) * 0x0101_0000;
        }
        let b = block_from_segments(&segs);
        let cb = compress(&b).unwrap();
        assert_eq!(cb.level, Level::Uncompressed);
        assert_eq!(decompress(&cb).unwrap(), b);
    }

    #[test]
    fn known_high_payload_decodes() {
        let cb = CompressedBlock {
            level: Level::High,
            base: 100,
            payload: (0..32u8).collect(),
        };
        let out = decompress(&cb).unwrap();
        let segs = segments(&out);
        for (i, &s) in segs.iter().enumerate() {
            assert_eq!(s, 100 + i as u32);
        }
    }

    #[test]
    fn malformed_payload_rejected() {
        let cb = CompressedBlock {
            level: Level::High,
            base: 0,
            payload: vec![0; 31],
        };
        assert!(matches!(decompress(&cb), Err(CodecError::MalformedPayload { .. })));
        assert!(matches!(compress(&[0u8; 64]), Err(CodecError::WrongLength(64))));
    }

    #[test]
    fn wrapping_deltas_roundtrip() {
        let mut segs = [0xffff_ffffu32; SEGMENTS];
        segs[0] = 0xffff_ffff;
        segs[1] = 0; // delta +1 with wrap
        segs[2] = 0xffff_ff80; // delta -127
        let b = block_from_segments(&segs);
        let cb = compress(&b).unwrap();
        assert_eq!(cb.level, Level::High);
        assert_eq!(decompress(&cb).unwrap(), b);
    }

    #[test]
    fn apportionment_examples() {
        // No traffic: allocation unchanged (None).
        assert_eq!(reapportion(&EpochCounters::default(), 32), None);

        // Pure high traffic: every slot goes High, capacity 128 blocks.
        let c = EpochCounters { high: 100, low: 0, unc: 0 };
        let a = reapportion(&c, 32).unwrap();
        assert_eq!((a.high_slots, a.low_slots, a.unc_slots), (32, 0, 0));
        assert_eq!(a.effective_blocks(), 128);

        // 50/25/25 split over 32 slots.
        let c = EpochCounters { high: 50, low: 25, unc: 25 };
        let a = reapportion(&c, 32).unwrap();
        assert_eq!((a.high_slots, a.low_slots, a.unc_slots), (16, 8, 8));
        assert_eq!(a.effective_blocks(), 16 * 4 + 8 * 2 + 8);

        // Pure uncompressed traffic keeps the plain layout.
        let c = EpochCounters { high: 0, low: 0, unc: 7 };
        let a = reapportion(&c, 32).unwrap();
        assert_eq!((a.high_slots, a.low_slots, a.unc_slots), (0, 0, 32));
    }

    #[test]
    fn shrink_requirements_reports_overflow_only() {
        let alloc = LevelAllocation { high_slots: 2, low_slots: 1, unc_slots: 1 };
        // Capacities: 8 / 2 / 1.
        assert_eq!(shrink_requirements([10, 2, 3], &alloc), [2, 0, 2]);
        assert_eq!(shrink_requirements([0, 0, 0], &alloc), [0, 0, 0]);
    }

    fn seg_strategy() -> impl Strategy<Value = [u32; SEGMENTS]> {
        prop_oneof![
            // Tight cluster (mostly High).
            (any::<u32>(), proptest::collection::vec(-128i64..=127, SEGMENTS))
                .prop_map(|(base, ds)| std::array::from_fn(|i| base.wrapping_add(ds[i] as u32))),
            // Medium cluster (mostly Low).
            (any::<u32>(), proptest::collection::vec(-32768i64..=32767, SEGMENTS))
                .prop_map(|(base, ds)| std::array::from_fn(|i| base.wrapping_add(ds[i] as u32))),
            // Anything.
            proptest::collection::vec(any::<u32>(), SEGMENTS)
                .prop_map(|v| std::array::from_fn(|i| v[i])),
        ]
    }

    proptest! {
        #[test]
        fn roundtrip_is_exact(segs in seg_strategy()) {
            let b = block_from_segments(&segs);
            let cb = compress(&b).unwrap();
            prop_assert_eq!(decompress(&cb).unwrap(), b);
            prop_assert_eq!(cb.payload.len(), cb.level.payload_bytes());
        }

        #[test]
        fn high_implies_low_fits(segs in seg_strategy()) {
            // Level monotonicity: any block whose deltas fit 1 byte also fits 2.
            let b = block_from_segments(&segs);
            if classify(&b).unwrap() == Level::High {
                let base = segs[0];
                for &s in segs.iter() {
                    let d = s.wrapping_sub(base) as i32;
                    prop_assert!(i16::try_from(d).is_ok());
                }
            }
        }

        #[test]
        fn apportionment_conserves_slots(h in 0u64..1000, l in 0u64..1000, u in 0u64..1000, slots in 1u32..64) {
            let c = EpochCounters { high: h, low: l, unc: u };
            if let Some(a) = reapportion(&c, slots) {
                prop_assert_eq!(a.total_slots(), slots);
                // Quota property: each level gets floor or ceil of its exact share.
                let tot = c.total() as f64;
                for (count, got) in [(h, a.high_slots), (l, a.low_slots), (u, a.unc_slots)] {
                    let exact = count as f64 * slots as f64 / tot;
                    prop_assert!((got as f64) >= exact.floor() - 1e-9);
                    prop_assert!((got as f64) <= exact.ceil() + 1e-9);
                }
            } else {
                prop_assert_eq!(c.total(), 0);
            }
        }
    }
}
