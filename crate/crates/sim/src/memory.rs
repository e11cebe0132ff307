//! Functional data storage: a sparse main memory image and the word-level
//! semantics of each request kind.
//!
//! The simulator carries real block payloads end to end so that caching,
//! compression, and eviction bugs show up as data corruption rather than
//! only as counter drift. Untouched memory reads as zeros.

use crate::cache_core::BLOCK_BYTES;
use crate::trace::{MemoryRequest, Op};
use std::collections::HashMap;

pub const BLOCK_LEN: usize = BLOCK_BYTES as usize;

pub type Block = [u8; BLOCK_LEN];

pub const ZERO_BLOCK: Block = [0u8; BLOCK_LEN];

/// Sparse backing store keyed by block number. Blocks never written read as
/// all zeros and occupy no space.
#[derive(Debug, Default, Clone)]
pub struct MainMemory {
    blocks: HashMap<u64, Block>,
}

impl MainMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read_block(&self, block_number: u64) -> Block {
        self.blocks.get(&block_number).copied().unwrap_or(ZERO_BLOCK)
    }

    pub fn write_block(&mut self, block_number: u64, data: Block) {
        self.blocks.insert(block_number, data);
    }

    /// Number of blocks ever written; used by integrity checks.
    pub fn touched_blocks(&self) -> usize {
        self.blocks.len()
    }
}

/// Deterministic payload for a write request: the trace format carries no
/// store data, so every write stores bytes derived from its request id. Any
/// two simulators that agree on request ids agree on memory contents.
pub fn synth_write_payload(request_id: u64, size: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(size as usize);
    let mut word = 0u64;
    for i in 0..size as u64 {
        if i % 8 == 0 {
            word = splitmix(request_id ^ (i / 8).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        }
        out.push((word >> ((i % 8) * 8)) as u8);
    }
    out
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Little-endian word at `offset`, zero-padded past the block end. Used to
/// record the value a request observed so independent replays can be
/// compared.
pub fn word_at(block: &Block, offset: usize) -> u32 {
    let mut bytes = [0u8; 4];
    let end = (offset + 4).min(BLOCK_LEN);
    bytes[..end - offset].copy_from_slice(&block[offset..end]);
    u32::from_le_bytes(bytes)
}

/// Result of applying one request to a block image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApplyResult {
    /// Old word returned to the program, for atomics.
    pub old_value: Option<u32>,
    /// Whether the block contents changed (drives dirty bits).
    pub mutated: bool,
}

/// Applies a request's data operation to `block` in place.
///
/// Reads leave the block untouched. Writes splice in the synthesized
/// payload. Atomics are 4-byte little-endian read-modify-writes returning
/// the prior word: AADD wraps, AEXCH swaps, ACAS stores operand 1 only when
/// the current word equals operand 0.
pub fn apply_request(req: &MemoryRequest, block: &mut Block) -> ApplyResult {
    let off = req.block_offset();
    debug_assert!(off + req.size as usize <= BLOCK_LEN);
    match req.op {
        Op::Read => ApplyResult { old_value: None, mutated: false },
        Op::Write => {
            let payload = synth_write_payload(req.id, req.size);
            let dst = &mut block[off..off + payload.len()];
            let mutated = dst != payload.as_slice();
            dst.copy_from_slice(&payload);
            ApplyResult { old_value: None, mutated }
        }
        Op::AtomicAdd | Op::AtomicExch | Op::AtomicCas => {
            let bytes: [u8; 4] = block[off..off + 4].try_into().unwrap();
            let old = u32::from_le_bytes(bytes);
            let new = match req.op {
                Op::AtomicAdd => old.wrapping_add(req.operands[0]),
                Op::AtomicExch => req.operands[0],
                Op::AtomicCas => {
                    if old == req.operands[0] {
                        req.operands[1]
                    } else {
                        old
                    }
                }
                _ => unreachable!(),
            };
            block[off..off + 4].copy_from_slice(&new.to_le_bytes());
            ApplyResult { old_value: Some(old), mutated: new != old }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: u64, op: Op, address: u64, size: u32, operands: Vec<u32>) -> MemoryRequest {
        MemoryRequest {
            id,
            issue_cycle: 0,
            origin_sm: 0,
            op,
            address,
            size,
            operands,
        }
    }

    #[test]
    fn untouched_memory_reads_zero() {
        let mem = MainMemory::new();
        assert_eq!(mem.read_block(42), ZERO_BLOCK);
        assert_eq!(mem.touched_blocks(), 0);
    }

    #[test]
    fn write_then_read_block() {
        let mut mem = MainMemory::new();
        let mut blk = ZERO_BLOCK;
        blk[0] = 0xab;
        mem.write_block(7, blk);
        assert_eq!(mem.read_block(7)[0], 0xab);
        assert_eq!(mem.read_block(8), ZERO_BLOCK);
    }

    #[test]
    fn read_does_not_mutate() {
        let mut blk = ZERO_BLOCK;
        blk[12] = 9;
        let before = blk;
        let r = apply_request(&req(1, Op::Read, 12, 4, vec![]), &mut blk);
        assert_eq!(blk, before);
        assert!(!r.mutated);
        assert_eq!(r.old_value, None);
    }

    #[test]
    fn write_splices_synthesized_payload() {
        let mut blk = ZERO_BLOCK;
        let r = apply_request(&req(5, Op::Write, 0x80 + 16, 8, vec![]), &mut blk);
        assert!(r.mutated);
        assert_eq!(&blk[16..24], synth_write_payload(5, 8).as_slice());
        assert_eq!(&blk[..16], &ZERO_BLOCK[..16]);
        assert_eq!(&blk[24..], &ZERO_BLOCK[24..]);
        // Same write again is idempotent: no further mutation.
        let r2 = apply_request(&req(5, Op::Write, 0x80 + 16, 8, vec![]), &mut blk);
        assert!(!r2.mutated);
    }

    #[test]
    fn payload_is_deterministic_and_id_sensitive() {
        assert_eq!(synth_write_payload(9, 16), synth_write_payload(9, 16));
        assert_ne!(synth_write_payload(9, 16), synth_write_payload(10, 16));
        assert_eq!(synth_write_payload(9, 128).len(), 128);
        // A shorter request is a prefix of the longer one for the same id.
        assert_eq!(synth_write_payload(9, 16)[..4], synth_write_payload(9, 4)[..]);
    }

    #[test]
    fn atomic_add_wraps_and_returns_old() {
        let mut blk = ZERO_BLOCK;
        blk[4..8].copy_from_slice(&0xffff_fffeu32.to_le_bytes());
        let r = apply_request(&req(1, Op::AtomicAdd, 4, 4, vec![3]), &mut blk);
        assert_eq!(r.old_value, Some(0xffff_fffe));
        assert!(r.mutated);
        assert_eq!(u32::from_le_bytes(blk[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn atomic_exch_swaps() {
        let mut blk = ZERO_BLOCK;
        blk[0..4].copy_from_slice(&7u32.to_le_bytes());
        let r = apply_request(&req(1, Op::AtomicExch, 0, 4, vec![100]), &mut blk);
        assert_eq!(r.old_value, Some(7));
        assert_eq!(u32::from_le_bytes(blk[0..4].try_into().unwrap()), 100);
    }

    #[test]
    fn atomic_cas_compares_before_storing() {
        let mut blk = ZERO_BLOCK;
        blk[0..4].copy_from_slice(&5u32.to_le_bytes());
        // Mismatch: no store.
        let r = apply_request(&req(1, Op::AtomicCas, 0, 4, vec![4, 99]), &mut blk);
        assert_eq!(r.old_value, Some(5));
        assert!(!r.mutated);
        assert_eq!(u32::from_le_bytes(blk[0..4].try_into().unwrap()), 5);
        // Match: store.
        let r = apply_request(&req(2, Op::AtomicCas, 0, 4, vec![5, 99]), &mut blk);
        assert_eq!(r.old_value, Some(5));
        assert!(r.mutated);
        assert_eq!(u32::from_le_bytes(blk[0..4].try_into().unwrap()), 99);
    }

    #[test]
    fn word_extraction_pads_past_block_end() {
        let mut blk = ZERO_BLOCK;
        blk[124..128].copy_from_slice(&[1, 2, 3, 4]);
        assert_eq!(word_at(&blk, 124), u32::from_le_bytes([1, 2, 3, 4]));
        assert_eq!(word_at(&blk, 126), u32::from_le_bytes([3, 4, 0, 0]));
        assert_eq!(word_at(&blk, 127), u32::from_le_bytes([4, 0, 0, 0]));
    }

    #[test]
    fn atomic_add_sequence_sums() {
        let mut blk = ZERO_BLOCK;
        let mut expect = 0u32;
        for i in 0..1000u32 {
            let r = apply_request(&req(i as u64, Op::AtomicAdd, 64, 4, vec![i * 7 + 1]), &mut blk);
            assert_eq!(r.old_value, Some(expect));
            expect = expect.wrapping_add(i * 7 + 1);
        }
        assert_eq!(u32::from_le_bytes(blk[64..68].try_into().unwrap()), expect);
    }
}
