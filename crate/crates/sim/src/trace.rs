//! Memory-request traces: text format, self-checking parser, and seeded
//! synthetic workload generation.
//!
//! Trace files are UTF-8 text. The first line must be `#morpheus-trace v1`;
//! `#instructions N` and `#sms N` may follow as metadata and any other line
//! starting with `#` is a comment. Body lines are
//! `<cycle> <sm> <op> <hex-address> [<size>] [<operand>...]` with ops
//! R / W / AADD / AEXCH / ACAS. Request ids are assigned in file order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Zipf};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

pub const TRACE_HEADER: &str = "#morpheus-trace v1";

/// Block granularity for address legality checks.
pub const BLOCK_BYTES: u64 = crate::cache_core::BLOCK_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Read,
    Write,
    AtomicAdd,
    AtomicExch,
    AtomicCas,
}

impl Op {
    pub fn token(self) -> &'static str {
        match self {
            Op::Read => "R",
            Op::Write => "W",
            Op::AtomicAdd => "AADD",
            Op::AtomicExch => "AEXCH",
            Op::AtomicCas => "ACAS",
        }
    }

    pub fn from_token(tok: &str) -> Option<Self> {
        Some(match tok {
            "R" => Op::Read,
            "W" => Op::Write,
            "AADD" => Op::AtomicAdd,
            "AEXCH" => Op::AtomicExch,
            "ACAS" => Op::AtomicCas,
            _ => return None,
        })
    }

    pub fn is_atomic(self) -> bool {
        matches!(self, Op::AtomicAdd | Op::AtomicExch | Op::AtomicCas)
    }

    pub fn operand_count(self) -> usize {
        match self {
            Op::Read | Op::Write => 0,
            Op::AtomicAdd | Op::AtomicExch => 1,
            Op::AtomicCas => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRequest {
    pub id: u64,
    pub issue_cycle: u64,
    pub origin_sm: u32,
    pub op: Op,
    pub address: u64,
    pub size: u32,
    pub operands: Vec<u32>,
}

impl MemoryRequest {
    pub fn block_number(&self) -> u64 {
        self.address / BLOCK_BYTES
    }

    pub fn block_address(&self) -> u64 {
        self.block_number() * BLOCK_BYTES
    }

    pub fn block_offset(&self) -> usize {
        (self.address % BLOCK_BYTES) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub total_instructions: Option<u64>,
    pub origin_sm_count: u32,
}

impl Default for TraceMeta {
    fn default() -> Self {
        Self {
            total_instructions: None,
            origin_sm_count: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: malformed request `{text}`: {reason}")]
    MalformedLine {
        line: usize,
        text: String,
        reason: String,
    },
    #[error("missing `{TRACE_HEADER}` header line")]
    HeaderMissing,
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn malformed(line: usize, text: &str, reason: impl Into<String>) -> TraceError {
    TraceError::MalformedLine {
        line,
        text: text.to_string(),
        reason: reason.into(),
    }
}

pub fn parse_trace<R: BufRead>(reader: R) -> Result<(TraceMeta, Vec<MemoryRequest>), TraceError> {
    let mut header_seen = false;
    let mut instructions: Option<u64> = None;
    let mut sms: Option<u32> = None;
    let mut requests = Vec::new();
    let mut last_cycle = 0u64;
    let mut max_sm = 0u32;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let raw = line?;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if line == TRACE_HEADER {
                header_seen = true;
            } else if let Some(v) = rest.strip_prefix("morpheus-trace") {
                return Err(malformed(lineno, line, format!("unsupported trace version `{}`", v.trim())));
            } else if let Some(v) = rest.strip_prefix("instructions") {
                let n: u64 = v
                    .trim()
                    .parse()
                    .map_err(|_| malformed(lineno, line, "instruction count must be an integer"))?;
                if n == 0 {
                    return Err(malformed(lineno, line, "instruction count must be positive"));
                }
                instructions = Some(n);
            } else if let Some(v) = rest.strip_prefix("sms") {
                let n: u32 = v
                    .trim()
                    .parse()
                    .map_err(|_| malformed(lineno, line, "SM count must be an integer"))?;
                sms = Some(n);
            }
            // Anything else starting with '#' is a comment.
            continue;
        }

        if !header_seen {
            return Err(TraceError::HeaderMissing);
        }

        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 4 {
            return Err(malformed(lineno, line, "expected `<cycle> <sm> <op> <address>`"));
        }
        let issue_cycle: u64 = toks[0]
            .parse()
            .map_err(|_| malformed(lineno, line, "cycle must be an unsigned integer"))?;
        if issue_cycle < last_cycle {
            return Err(malformed(
                lineno,
                line,
                format!("issue cycles must be non-decreasing (previous {last_cycle})"),
            ));
        }
        let origin_sm: u32 = toks[1]
            .parse()
            .map_err(|_| malformed(lineno, line, "SM index must be an unsigned integer"))?;
        let op = Op::from_token(toks[2])
            .ok_or_else(|| malformed(lineno, line, format!("unknown op `{}`", toks[2])))?;
        let hex = toks[3].trim_start_matches("0x").trim_start_matches("0X");
        let address = u64::from_str_radix(hex, 16)
            .map_err(|_| malformed(lineno, line, "address must be hexadecimal"))?;

        let mut rest = &toks[4..];
        let size: u32 = if op.operand_count() == 0 {
            // Optional size, then nothing else.
            match rest.first() {
                Some(tok) => {
                    let s = tok
                        .parse()
                        .map_err(|_| malformed(lineno, line, "size must be an unsigned integer"))?;
                    rest = &rest[1..];
                    s
                }
                None => 4,
            }
        } else {
            // Atomics: size token is optional but must be 4 if present, and
            // operands follow.
            if rest.len() == op.operand_count() + 1 {
                let s: u32 = rest[0]
                    .parse()
                    .map_err(|_| malformed(lineno, line, "size must be an unsigned integer"))?;
                rest = &rest[1..];
                s
            } else {
                4
            }
        };
        if op.is_atomic() && size != 4 {
            return Err(malformed(lineno, line, "atomic operations act on 4-byte words"));
        }
        if size == 0 || size as u64 > BLOCK_BYTES {
            return Err(malformed(lineno, line, format!("size must be in 1..={BLOCK_BYTES}")));
        }
        if (address % BLOCK_BYTES) + size as u64 > BLOCK_BYTES {
            return Err(malformed(
                lineno,
                line,
                format!("access crosses a {BLOCK_BYTES}-byte block boundary"),
            ));
        }
        if rest.len() != op.operand_count() {
            return Err(malformed(
                lineno,
                line,
                format!("op {} takes {} operand(s), got {}", op.token(), op.operand_count(), rest.len()),
            ));
        }
        let mut operands = Vec::with_capacity(rest.len());
        for tok in rest {
            // Accept negative literals; atomics wrap in 32 bits anyway.
            let v: i64 = tok
                .parse()
                .map_err(|_| malformed(lineno, line, "operands must be integers"))?;
            operands.push(v as u32);
        }

        max_sm = max_sm.max(origin_sm);
        last_cycle = issue_cycle;
        requests.push(MemoryRequest {
            id: requests.len() as u64,
            issue_cycle,
            origin_sm,
            op,
            address,
            size,
            operands,
        });
    }

    if !header_seen {
        return Err(TraceError::HeaderMissing);
    }
    let meta = TraceMeta {
        total_instructions: instructions,
        origin_sm_count: sms.unwrap_or(if requests.is_empty() { 1 } else { max_sm + 1 }),
    };
    Ok((meta, requests))
}

pub fn serialize_trace<W: Write>(
    meta: &TraceMeta,
    requests: &[MemoryRequest],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    if let Some(n) = meta.total_instructions {
        writeln!(w, "#instructions {n}")?;
    }
    writeln!(w, "#sms {}", meta.origin_sm_count)?;
    for r in requests {
        write!(w, "{} {} {} 0x{:x} {}", r.issue_cycle, r.origin_sm, r.op.token(), r.address, r.size)?;
        for o in &r.operands {
            write!(w, " {o}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Order-independent fingerprint of a trace, used to refuse comparisons of
/// reports produced from different inputs. FNV-1a over the canonical fields.
pub fn fingerprint(meta: &TraceMeta, requests: &[MemoryRequest]) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    let mut eat = |v: u64| {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    eat(meta.total_instructions.unwrap_or(0));
    eat(meta.origin_sm_count as u64);
    for r in requests {
        eat(r.issue_cycle);
        eat(r.origin_sm as u64);
        eat(r.op as u64);
        eat(r.address);
        eat(r.size as u64);
        for &o in &r.operands {
            eat(o as u64);
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WorkloadKind {
    Uniform,
    Zipfian { alpha: f64 },
    Strided { stride_bytes: u64 },
    Streaming,
    PointerChase,
}

/// Parameters for synthetic trace generation. Deterministic for a fixed seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub kind: WorkloadKind,
    pub footprint_bytes: u64,
    pub request_count: u64,
    pub write_fraction: f64,
    pub atomic_fraction: f64,
    pub seed: u64,
    /// Mean gap between consecutive requests; gaps are exponential draws.
    pub inter_arrival_cycles: f64,
}

impl TraceSpec {
    pub fn validate(&self) -> Result<(), TraceError> {
        let err = |m: &str| Err(TraceError::InvalidSpec(m.to_string()));
        if self.footprint_bytes < BLOCK_BYTES {
            return err("footprint_bytes must be at least one block (128 B)");
        }
        if self.footprint_bytes % BLOCK_BYTES != 0 {
            return err("footprint_bytes must be a multiple of the 128 B block size");
        }
        if !(0.0..=1.0).contains(&self.write_fraction) || !(0.0..=1.0).contains(&self.atomic_fraction) {
            return err("write_fraction and atomic_fraction must lie in [0, 1]");
        }
        if self.write_fraction + self.atomic_fraction > 1.0 {
            return err("write_fraction + atomic_fraction must not exceed 1");
        }
        if self.inter_arrival_cycles < 0.0 || !self.inter_arrival_cycles.is_finite() {
            return err("inter_arrival_cycles must be finite and non-negative");
        }
        match self.kind {
            WorkloadKind::Zipfian { alpha } => {
                if !(alpha > 0.0) || !alpha.is_finite() {
                    return err("zipfian alpha must be positive");
                }
            }
            WorkloadKind::Strided { stride_bytes } => {
                if stride_bytes == 0 || stride_bytes % 4 != 0 {
                    return err("stride_bytes must be a positive multiple of 4");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

pub fn generate(spec: &TraceSpec) -> Result<(TraceMeta, Vec<MemoryRequest>), TraceError> {
    spec.validate()?;
    let blocks = spec.footprint_bytes / BLOCK_BYTES;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let zipf = match spec.kind {
        WorkloadKind::Zipfian { alpha } => Some(
            Zipf::new(blocks, alpha)
                .map_err(|e| TraceError::InvalidSpec(format!("zipfian parameters rejected: {e}")))?,
        ),
        _ => None,
    };
    let chase = match spec.kind {
        WorkloadKind::PointerChase => {
            // Sattolo shuffle: a single-cycle permutation over all blocks.
            let mut next: Vec<u64> = (0..blocks).collect();
            for i in (1..next.len()).rev() {
                let j = rng.gen_range(0..i);
                next.swap(i, j);
            }
            Some(next)
        }
        _ => None,
    };
    let gap_dist = if spec.inter_arrival_cycles > 0.0 {
        Some(Exp::new(1.0 / spec.inter_arrival_cycles).expect("mean validated positive"))
    } else {
        None
    };

    let mut requests = Vec::with_capacity(spec.request_count as usize);
    let mut cycle = 0u64;
    let mut cursor = 0u64; // streaming / pointer-chase position
    for id in 0..spec.request_count {
        let address = match spec.kind {
            WorkloadKind::Uniform => rng.gen_range(0..blocks) * BLOCK_BYTES,
            WorkloadKind::Zipfian { .. } => {
                let rank = zipf.as_ref().unwrap().sample(&mut rng) as u64;
                (rank - 1) * BLOCK_BYTES
            }
            WorkloadKind::Strided { stride_bytes } => (id * stride_bytes) % spec.footprint_bytes,
            WorkloadKind::Streaming => {
                let a = (cursor * BLOCK_BYTES) % spec.footprint_bytes;
                cursor += 1;
                a
            }
            WorkloadKind::PointerChase => {
                let a = cursor * BLOCK_BYTES;
                cursor = chase.as_ref().unwrap()[cursor as usize];
                a
            }
        };
        let u: f64 = rng.gen();
        let (op, operands) = if u < spec.write_fraction {
            (Op::Write, Vec::new())
        } else if u < spec.write_fraction + spec.atomic_fraction {
            match id % 3 {
                0 => (Op::AtomicAdd, vec![rng.gen::<u32>()]),
                1 => (Op::AtomicExch, vec![rng.gen::<u32>()]),
                _ => (Op::AtomicCas, vec![rng.gen::<u32>(), rng.gen::<u32>()]),
            }
        } else {
            (Op::Read, Vec::new())
        };
        requests.push(MemoryRequest {
            id,
            issue_cycle: cycle,
            origin_sm: 0,
            op,
            address,
            size: 4,
            operands,
        });
        if let Some(d) = &gap_dist {
            cycle += d.sample(&mut rng).round() as u64;
        }
    }
    Ok((TraceMeta::default(), requests))
}
