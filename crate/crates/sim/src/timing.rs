//! Event-driven timing engine.
//!
//! Requests arrive at their issue time, are steered by the partition
//! controller, and complete after a latency determined by where they were
//! served. Extended sets serve one request at a time — the owning helper
//! warp is busy for a fixed occupancy window per block moved — while the
//! conventional banks and the memory channel are modeled as rate limiters.
//!
//! All functional state changes happen at deterministic event instants, so
//! two runs over the same inputs produce byte-identical outputs, and the
//! order in which requests touched memory can be replayed exactly.

use crate::cache_core::{AccessOp, AccessOutcome, CacheGeometry, SetAssocCache, BLOCK_BYTES};
use crate::controller::{
    AddressSeparator, PartitionMap, PredictorMode, PredictorStats, RouteDecision, Router,
};
use crate::ext_llc::{Backing, CapacitySummary, ExtGeometry, ExtendedLlc, FillOutcome};
use crate::memory::{apply_request, word_at, MainMemory};
use crate::trace::MemoryRequest;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use thiserror::Error;

/// How a helper warp reaches its own register file when serving data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndirectMovMode {
    /// Hardware-indexed register access; no extra cost.
    Native,
    /// Emulated indirect addressing; adds a fixed penalty to every service
    /// that moves data through a register-file frame.
    Software,
}

/// Service latencies in nanoseconds, end to end from request issue, plus
/// the per-service warp busy window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyConfig {
    pub conv_hit_ns: u64,
    pub conv_miss_ns: u64,
    pub ext_hit_ns: u64,
    pub ext_miss_ns: u64,
    pub predicted_miss_ns: u64,
    /// How long one block transfer occupies the owning warp.
    pub warp_occupancy_ns: u64,
    pub indirect_mov: IndirectMovMode,
    pub software_mov_penalty_ns: u64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            conv_hit_ns: 160,
            conv_miss_ns: 608,
            ext_hit_ns: 185,
            ext_miss_ns: 773,
            predicted_miss_ns: 608,
            warp_occupancy_ns: 181,
            indirect_mov: IndirectMovMode::Native,
            software_mov_penalty_ns: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthConfig {
    /// Data port of each conventional LLC partition.
    pub conv_partition_bytes_per_s: f64,
    /// Aggregate memory channel.
    pub dram_bytes_per_s: f64,
}

impl Default for BandwidthConfig {
    fn default() -> Self {
        Self {
            conv_partition_bytes_per_s: 300e9,
            dram_bytes_per_s: 700e9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    pub conv_pj_per_byte: f64,
    pub ext_pj_per_byte: f64,
    pub dram_pj_per_byte: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            conv_pj_per_byte: 10.0,
            ext_pj_per_byte: 61.0,
            dram_pj_per_byte: 120.0,
        }
    }
}

/// Everything the engine needs, already validated and resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub conv_geometry: CacheGeometry,
    pub partitions: u32,
    pub ext_geometry: ExtGeometry,
    pub predictor_mode: PredictorMode,
    pub filter_bits: u32,
    pub filter_probes: u32,
    pub compression: bool,
    pub epoch_cycles: u64,
    pub latency: LatencyConfig,
    pub bandwidth: BandwidthConfig,
    pub energy: EnergyConfig,
    pub ns_per_cycle: u64,
    /// Record each request's functional outcome for replay verification.
    pub collect_records: bool,
}

/// Serializes transfers over a shared link. Time is tracked in
/// femtoseconds so sub-nanosecond holds (128 B at hundreds of GB/s)
/// accumulate without rounding drift.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    bytes_per_s: f64,
    free_at_fs: u128,
}

impl RateLimiter {
    pub fn new(bytes_per_s: f64) -> Self {
        assert!(bytes_per_s > 0.0 && bytes_per_s.is_finite());
        Self {
            bytes_per_s,
            free_at_fs: 0,
        }
    }

    /// Earliest nanosecond at or after `now_ns` the link can take `bytes`,
    /// reserving the slot.
    pub fn grant(&mut self, now_ns: u64, bytes: u64) -> u64 {
        let now_fs = now_ns as u128 * 1_000_000;
        let start = now_fs.max(self.free_at_fs);
        let hold_fs = (bytes as f64 * 1e15 / self.bytes_per_s).round() as u128;
        self.free_at_fs = start + hold_fs;
        start.div_ceil(1_000_000) as u64
    }

    /// Total busy time reserved so far, in nanoseconds.
    pub fn busy_ns(&self) -> f64 {
        self.free_at_fs as f64 / 1e6
    }
}

/// Where a request was served, which fixes its latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyClass {
    ConvHit,
    ConvMiss,
    ExtHit,
    ExtMiss,
    PredictedMiss,
}

impl LatencyClass {
    pub const ALL: [LatencyClass; 5] = [
        LatencyClass::ConvHit,
        LatencyClass::ConvMiss,
        LatencyClass::ExtHit,
        LatencyClass::ExtMiss,
        LatencyClass::PredictedMiss,
    ];

    pub fn index(self) -> usize {
        match self {
            LatencyClass::ConvHit => 0,
            LatencyClass::ConvMiss => 1,
            LatencyClass::ExtHit => 2,
            LatencyClass::ExtMiss => 3,
            LatencyClass::PredictedMiss => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LatencyClass::ConvHit => "conv_hit",
            LatencyClass::ConvMiss => "conv_miss",
            LatencyClass::ExtHit => "ext_hit",
            LatencyClass::ExtMiss => "ext_miss",
            LatencyClass::PredictedMiss => "predicted_miss",
        }
    }
}

/// Raw event counts from one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCounters {
    pub requests: u64,
    pub conv_hits: u64,
    pub conv_misses: u64,
    pub conv_writebacks: u64,
    /// Requests forwarded to an extended set (predicted or assumed hits).
    pub ext_forwards: u64,
    pub ext_hits: u64,
    /// Forwarded requests the set did not hold, bypasses included.
    pub ext_misses: u64,
    /// Served straight from memory because no frame class fit the block.
    pub ext_bypasses: u64,
    /// Rewrites that outgrew the set and fell back to memory.
    pub ext_rewrite_drops: u64,
    pub ext_relocations: u64,
    /// Dirty blocks written back by extended-set evictions.
    pub ext_writebacks: u64,
    /// Requests routed directly to memory by the predictor.
    pub predicted_misses: u64,
    pub fills_installed: u64,
    pub fills_already_present: u64,
    pub fills_bypassed: u64,
    pub epochs: u64,
    pub epoch_evictions: u64,
    pub epoch_writebacks: u64,
    /// 128-byte transfers on the memory channel.
    pub dram_reads: u64,
    pub dram_writes: u64,
}

impl RawCounters {
    /// Requests the on-chip cache hierarchy could not serve.
    pub fn llc_misses(&self) -> u64 {
        self.conv_misses + self.ext_misses + self.predicted_misses
    }

    pub fn llc_hits(&self) -> u64 {
        self.conv_hits + self.ext_hits
    }

    pub fn routed_total(&self) -> u64 {
        self.conv_hits + self.conv_misses + self.ext_hits + self.ext_misses + self.predicted_misses
    }
}

/// Bytes moved per storage tier, for energy and utilization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficBytes {
    pub conv_bytes: u64,
    pub ext_bytes: u64,
    pub dram_bytes: u64,
}

/// Functional outcome of one request, in global apply order. Replaying
/// records through a flat memory must reproduce every value exactly;
/// anything else means the cache hierarchy corrupted data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RequestRecord {
    pub id: u64,
    /// Position in the global functional serialization.
    pub apply_seq: u64,
    pub class: LatencyClass,
    pub latency_ns: u64,
    pub old_value: Option<u32>,
    pub value_after: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("request {id}: replay produced old={replay_old:?} value={replay_value:#010x}, run recorded old={run_old:?} value={run_value:#010x}")]
    ValueMismatch {
        id: u64,
        replay_old: Option<u32>,
        replay_value: u32,
        run_old: Option<u32>,
        run_value: u32,
    },
    #[error("run produced {got} records for {expected} requests")]
    RecordCount { got: usize, expected: usize },
}

/// Everything a run produced, before report shaping.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub counters: RawCounters,
    pub predictor: PredictorStats,
    pub traffic: TrafficBytes,
    /// Raw per-request latencies, one bucket per class.
    pub class_latencies: Vec<Vec<u64>>,
    pub end_ns: u64,
    pub ext_capacity: CapacitySummary,
    /// Frame split across all extended sets when the run ended.
    pub final_level_slots: [u64; 3],
    pub records: Option<Vec<RequestRecord>>,
}

impl RunOutput {
    /// Replays the recorded serialization against a flat memory and checks
    /// every request saw the same values the run saw.
    pub fn verify_replay(&self, requests: &[MemoryRequest]) -> Result<(), ReplayError> {
        let Some(records) = &self.records else {
            return Ok(());
        };
        if records.len() != requests.len() {
            return Err(ReplayError::RecordCount {
                got: records.len(),
                expected: requests.len(),
            });
        }
        let mut order: Vec<&RequestRecord> = records.iter().collect();
        order.sort_unstable_by_key(|r| r.apply_seq);
        let mut mem = MainMemory::new();
        for rec in order {
            let req = &requests[rec.id as usize];
            let block = req.block_number();
            let mut raw = mem.read_block(block);
            let apply = apply_request(req, &mut raw);
            if apply.mutated {
                mem.write_block(block, raw);
            }
            let value = word_at(&raw, req.block_offset());
            if apply.old_value != rec.old_value || value != rec.value_after {
                return Err(ReplayError::ValueMismatch {
                    id: rec.id,
                    replay_old: apply.old_value,
                    replay_value: value,
                    run_old: rec.old_value,
                    run_value: rec.value_after,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Geometry(#[from] crate::cache_core::GeometryError),
    #[error(transparent)]
    Extended(#[from] crate::ext_llc::ExtError),
    #[error(transparent)]
    Controller(#[from] crate::controller::ControllerError),
    #[error("requests must be sorted by issue cycle")]
    UnsortedRequests,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    /// A helper warp finished its occupancy window.
    ServiceEnd { set: u32 },
    /// A request reaches its partition controller.
    Arrive { req: u32 },
    /// A predicted-miss response reaches the owning warp for installation.
    FillArrive { set: u32, block: u64 },
    /// A set may start its next queued work item.
    Dispatch { set: u32 },
    /// A response reaches the requesting core.
    Respond { req: u32, class: LatencyClass },
}

impl EventKind {
    fn ordinal(self) -> u8 {
        match self {
            EventKind::ServiceEnd { .. } => 0,
            EventKind::Arrive { .. } => 1,
            EventKind::FillArrive { .. } => 2,
            EventKind::Dispatch { .. } => 3,
            EventKind::Respond { .. } => 4,
        }
    }

    fn resource(self) -> u64 {
        match self {
            EventKind::ServiceEnd { set }
            | EventKind::FillArrive { set, .. }
            | EventKind::Dispatch { set } => set as u64,
            EventKind::Arrive { req } | EventKind::Respond { req, .. } => req as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Event {
    time: u64,
    seq: u64,
    kind: EventKind,
}

impl Event {
    fn key(&self) -> (u64, u8, u64, u64) {
        (self.time, self.kind.ordinal(), self.kind.resource(), self.seq)
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy)]
enum Work {
    Request(u32),
    Fill { block: u64 },
}

/// Queue and busy state for one extended set's owning warp — the live part
/// of the controller's per-set status row.
#[derive(Debug, Default)]
struct SetStation {
    queue: VecDeque<Work>,
    busy: bool,
}

struct RecordSlot {
    apply_seq: u64,
    old_value: Option<u32>,
    value_after: u32,
    class: Option<LatencyClass>,
    latency_ns: u64,
    done: bool,
}

pub struct Engine<'a> {
    params: &'a SimParams,
    requests: &'a [MemoryRequest],
    conv: SetAssocCache,
    ext: ExtendedLlc,
    router: Router,
    partition_map: PartitionMap,
    mem: MainMemory,
    stations: Vec<SetStation>,
    conv_ports: Vec<RateLimiter>,
    dram: RateLimiter,
    events: BinaryHeap<Reverse<Event>>,
    event_seq: u64,
    now: u64,
    epoch_idx: u64,
    epoch_ns: u64,
    apply_seq: u64,
    counters: RawCounters,
    traffic: TrafficBytes,
    class_latencies: Vec<Vec<u64>>,
    records: Vec<RecordSlot>,
    responded: u64,
}

impl<'a> Engine<'a> {
    pub fn new(params: &'a SimParams, requests: &'a [MemoryRequest]) -> Result<Self, EngineError> {
        if requests.windows(2).any(|w| w[0].issue_cycle > w[1].issue_cycle) {
            return Err(EngineError::UnsortedRequests);
        }
        let conv = SetAssocCache::new(params.conv_geometry);
        let ext = ExtendedLlc::new(params.ext_geometry.clone(), params.compression)?;
        let partition_map = PartitionMap::new(params.partitions)?;
        partition_map.validate_rows(ext.set_count())?;
        let separator = AddressSeparator::new(
            params.conv_geometry.block_capacity(),
            params.ext_geometry.capacity_blocks(),
        );
        let router = Router::new(
            params.predictor_mode,
            separator,
            ext.set_count(),
            params.filter_bits,
            params.filter_probes,
            params.compression,
        );
        let stations = (0..ext.set_count()).map(|_| SetStation::default()).collect();
        let conv_ports = (0..params.partitions)
            .map(|_| RateLimiter::new(params.bandwidth.conv_partition_bytes_per_s))
            .collect();
        let records = if params.collect_records {
            requests
                .iter()
                .map(|_| RecordSlot {
                    apply_seq: 0,
                    old_value: None,
                    value_after: 0,
                    class: None,
                    latency_ns: 0,
                    done: false,
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            params,
            requests,
            conv,
            ext,
            router,
            partition_map,
            mem: MainMemory::new(),
            stations,
            conv_ports,
            dram: RateLimiter::new(params.bandwidth.dram_bytes_per_s),
            events: BinaryHeap::new(),
            event_seq: 0,
            now: 0,
            epoch_idx: 0,
            epoch_ns: params.epoch_cycles.saturating_mul(params.ns_per_cycle),
            apply_seq: 0,
            counters: RawCounters::default(),
            traffic: TrafficBytes::default(),
            class_latencies: vec![Vec::new(); LatencyClass::ALL.len()],
            records,
            responded: 0,
        })
    }

    fn push(&mut self, time: u64, kind: EventKind) {
        let seq = self.event_seq;
        self.event_seq += 1;
        self.events.push(Reverse(Event { time, seq, kind }));
    }

    fn next_apply_seq(&mut self) -> u64 {
        let s = self.apply_seq;
        self.apply_seq += 1;
        s
    }

    fn record_apply(&mut self, req_id: u64, old_value: Option<u32>, value_after: u32) {
        let seq = self.next_apply_seq();
        if self.params.collect_records {
            let slot = &mut self.records[req_id as usize];
            debug_assert!(!slot.done, "request {req_id} applied twice");
            slot.apply_seq = seq;
            slot.old_value = old_value;
            slot.value_after = value_after;
            slot.done = true;
        }
    }

    fn charge_dram_write(&mut self, at: u64) {
        self.dram.grant(at, BLOCK_BYTES);
        self.counters.dram_writes += 1;
        self.traffic.dram_bytes += BLOCK_BYTES;
    }

    /// Runs any compression epochs whose boundary has passed.
    fn advance_epochs(&mut self, upto_ns: u64) {
        if !self.params.compression || self.epoch_ns == 0 || self.ext.is_empty() {
            return;
        }
        while (self.epoch_idx + 1).saturating_mul(self.epoch_ns) <= upto_ns {
            self.epoch_idx += 1;
            let at = self.epoch_idx * self.epoch_ns;
            let summary = self.ext.epoch_update_all(&mut self.mem);
            self.counters.epochs += 1;
            self.counters.epoch_evictions += summary.evicted as u64;
            self.counters.epoch_writebacks += summary.dram_writes as u64;
            for _ in 0..summary.dram_writes {
                self.charge_dram_write(at);
            }
        }
    }

    fn on_arrive(&mut self, req_idx: u32) {
        let req = &self.requests[req_idx as usize];
        let block = req.block_number();
        match self.router.route(block, &self.ext) {
            RouteDecision::Conventional => self.serve_conventional(req_idx),
            RouteDecision::ExtendedForward { set } => {
                self.counters.ext_forwards += 1;
                self.stations[set as usize].queue.push_back(Work::Request(req_idx));
                if !self.stations[set as usize].busy {
                    self.push(self.now, EventKind::Dispatch { set });
                }
            }
            RouteDecision::PredictedMiss { set } => self.serve_predicted_miss(req_idx, set),
        }
    }

    fn serve_conventional(&mut self, req_idx: u32) {
        let req = &self.requests[req_idx as usize];
        let block = req.block_number();
        // Functional effect now, in arrival order: the conventional banks
        // are a single actor over their share of the address space.
        let mut raw = self.mem.read_block(block);
        let apply = apply_request(req, &mut raw);
        if apply.mutated {
            self.mem.write_block(block, raw);
        }
        let value_after = word_at(&raw, req.block_offset());
        self.record_apply(req.id, apply.old_value, value_after);

        let op = if apply.mutated { AccessOp::Write } else { AccessOp::Read };
        let outcome = self.conv.access(req.block_address(), op);
        let partition = self
            .partition_map
            .conv_partition(self.conv.set_index(block) as u64);
        let port_grant = self.conv_ports[partition as usize].grant(self.now, BLOCK_BYTES);
        self.traffic.conv_bytes += BLOCK_BYTES;
        match outcome {
            AccessOutcome::Hit { .. } => {
                self.counters.conv_hits += 1;
                let t = port_grant + self.params.latency.conv_hit_ns;
                self.push(t, EventKind::Respond { req: req_idx, class: LatencyClass::ConvHit });
            }
            AccessOutcome::Miss { victim, .. } => {
                self.counters.conv_misses += 1;
                let fetch = self.dram.grant(port_grant, BLOCK_BYTES);
                self.counters.dram_reads += 1;
                self.traffic.dram_bytes += BLOCK_BYTES;
                if let Some((_, true)) = victim {
                    // Data already reached memory functionally; this is the
                    // writeback's bandwidth and energy.
                    self.counters.conv_writebacks += 1;
                    self.charge_dram_write(fetch);
                }
                let t = fetch + self.params.latency.conv_miss_ns;
                self.push(t, EventKind::Respond { req: req_idx, class: LatencyClass::ConvMiss });
            }
        }
    }

    fn serve_predicted_miss(&mut self, req_idx: u32, set: u32) {
        let req = &self.requests[req_idx as usize];
        let block = req.block_number();
        self.counters.predicted_misses += 1;
        // The predictor guarantees no live copy exists (never falsely
        // negative), so memory is current and can serve directly.
        let mut raw = self.mem.read_block(block);
        let apply = apply_request(req, &mut raw);
        if apply.mutated {
            self.mem.write_block(block, raw);
        }
        let value_after = word_at(&raw, req.block_offset());
        self.record_apply(req.id, apply.old_value, value_after);

        // One memory transfer serves the request read-modify-write.
        let grant = self.dram.grant(self.now, BLOCK_BYTES);
        self.counters.dram_reads += 1;
        self.traffic.dram_bytes += BLOCK_BYTES;
        let respond = grant + self.params.latency.predicted_miss_ns;
        self.push(respond, EventKind::Respond { req: req_idx, class: LatencyClass::PredictedMiss });
        // The response also carries the block to the owning warp, which
        // installs it off the critical path.
        self.push(respond, EventKind::FillArrive { set, block });
    }

    fn software_penalty(&self, rf_data_access: bool) -> u64 {
        if rf_data_access && self.params.latency.indirect_mov == IndirectMovMode::Software {
            self.params.latency.software_mov_penalty_ns
        } else {
            0
        }
    }

    fn on_dispatch(&mut self, set: u32) {
        if self.stations[set as usize].busy {
            return;
        }
        // Zero-time work (skipped fills) lets the next item start at the
        // same instant.
        while let Some(work) = self.stations[set as usize].queue.pop_front() {
            match work {
                Work::Request(req_idx) => {
                    self.start_request_service(set, req_idx);
                    return;
                }
                Work::Fill { block } => {
                    if self.start_fill_service(set, block) {
                        return;
                    }
                }
            }
        }
    }

    fn start_request_service(&mut self, set: u32, req_idx: u32) {
        let req = &self.requests[req_idx as usize];
        let summary = self.ext.set_mut(set).service(req, &mut self.mem);
        self.record_apply(req.id, summary.old_value, summary.value_after);

        // Memory traffic this service caused, fetch first.
        let mut fetch_grant = self.now;
        for i in 0..summary.dram_reads {
            let g = self.dram.grant(self.now, BLOCK_BYTES);
            if i == 0 {
                fetch_grant = g;
            }
            self.counters.dram_reads += 1;
            self.traffic.dram_bytes += BLOCK_BYTES;
        }
        for _ in 0..summary.dram_writes {
            self.charge_dram_write(self.now);
        }
        // Data moved through the set's array unless it was a pure bypass.
        let touched_array = summary.hit || summary.resident_after;
        if touched_array {
            self.traffic.ext_bytes += BLOCK_BYTES;
        }

        if summary.hit {
            self.counters.ext_hits += 1;
        } else {
            self.counters.ext_misses += 1;
        }
        if summary.bypassed {
            self.counters.ext_bypasses += 1;
        }
        if summary.rewrite_dropped {
            self.counters.ext_rewrite_drops += 1;
        }
        if summary.relocated {
            self.counters.ext_relocations += 1;
        }
        self.counters.ext_writebacks += summary.victim_writebacks as u64;

        if summary.resident_after {
            let block = req.block_number();
            self.router.record_access(set, block, self.ext.set(set));
        }

        let penalty = self.software_penalty(summary.rf_data_access);
        let (class, total) = if summary.hit {
            (LatencyClass::ExtHit, self.params.latency.ext_hit_ns)
        } else {
            (LatencyClass::ExtMiss, self.params.latency.ext_miss_ns)
        };
        // Misses ride the memory channel; queueing there delays the reply.
        let anchor = if summary.hit { self.now } else { fetch_grant };
        self.push(anchor + total + penalty, EventKind::Respond { req: req_idx, class });

        self.stations[set as usize].busy = true;
        let occupancy = self.params.latency.warp_occupancy_ns + penalty;
        self.push(self.now + occupancy, EventKind::ServiceEnd { set });
    }

    /// Returns true if the fill occupied the warp.
    fn start_fill_service(&mut self, set: u32, block: u64) -> bool {
        let summary = self.ext.set_mut(set).fill(block, &mut self.mem);
        match summary.outcome {
            FillOutcome::AlreadyPresent => {
                self.counters.fills_already_present += 1;
                false
            }
            FillOutcome::Bypassed => {
                self.counters.fills_bypassed += 1;
                false
            }
            FillOutcome::Stored => {
                self.counters.fills_installed += 1;
                self.counters.ext_writebacks += summary.dram_writes as u64;
                for _ in 0..summary.dram_writes {
                    self.charge_dram_write(self.now);
                }
                self.traffic.ext_bytes += BLOCK_BYTES;
                self.router.record_access(set, block, self.ext.set(set));
                let rf = self.ext.set(set).backing() == Backing::RegisterFile;
                let occupancy = self.params.latency.warp_occupancy_ns + self.software_penalty(rf);
                self.stations[set as usize].busy = true;
                self.push(self.now + occupancy, EventKind::ServiceEnd { set });
                true
            }
        }
    }

    fn on_service_end(&mut self, set: u32) {
        self.stations[set as usize].busy = false;
        if !self.stations[set as usize].queue.is_empty() {
            self.push(self.now, EventKind::Dispatch { set });
        }
    }

    fn on_respond(&mut self, req_idx: u32, class: LatencyClass) {
        let issue = self.requests[req_idx as usize].issue_cycle * self.params.ns_per_cycle;
        debug_assert!(self.now >= issue);
        let latency = self.now - issue;
        self.class_latencies[class.index()].push(latency);
        if self.params.collect_records {
            let slot = &mut self.records[req_idx as usize];
            debug_assert!(slot.class.is_none(), "request {req_idx} responded twice");
            slot.class = Some(class);
            slot.latency_ns = latency;
        }
        self.responded += 1;
    }

    pub fn run(mut self) -> RunOutput {
        self.counters.requests = self.requests.len() as u64;
        for (i, req) in self.requests.iter().enumerate() {
            let at = req.issue_cycle * self.params.ns_per_cycle;
            self.push(at, EventKind::Arrive { req: i as u32 });
        }
        while let Some(Reverse(ev)) = self.events.pop() {
            debug_assert!(ev.time >= self.now, "time went backwards");
            self.advance_epochs(ev.time);
            self.now = ev.time;
            match ev.kind {
                EventKind::ServiceEnd { set } => self.on_service_end(set),
                EventKind::Arrive { req } => self.on_arrive(req),
                EventKind::FillArrive { set, block } => {
                    self.stations[set as usize].queue.push_back(Work::Fill { block });
                    if !self.stations[set as usize].busy {
                        self.push(self.now, EventKind::Dispatch { set });
                    }
                }
                EventKind::Dispatch { set } => self.on_dispatch(set),
                EventKind::Respond { req, class } => self.on_respond(req, class),
            }
        }
        assert_eq!(self.responded, self.requests.len() as u64, "requests left unanswered");
        assert_eq!(
            self.counters.routed_total(),
            self.counters.requests,
            "routing lost requests"
        );

        let mut final_level_slots = [0u64; 3];
        for set in self.ext.sets() {
            let a = set.allocation();
            final_level_slots[0] += a.high_slots as u64;
            final_level_slots[1] += a.low_slots as u64;
            final_level_slots[2] += a.unc_slots as u64;
        }
        let records = if self.params.collect_records {
            Some(
                self.records
                    .iter()
                    .enumerate()
                    .map(|(i, slot)| {
                        assert!(slot.done, "request {i} never applied");
                        RequestRecord {
                            id: i as u64,
                            apply_seq: slot.apply_seq,
                            class: slot.class.expect("responded requests carry a class"),
                            latency_ns: slot.latency_ns,
                            old_value: slot.old_value,
                            value_after: slot.value_after,
                        }
                    })
                    .collect(),
            )
        } else {
            None
        };
        RunOutput {
            counters: self.counters,
            predictor: self.router.stats,
            traffic: self.traffic,
            class_latencies: self.class_latencies,
            end_ns: self.now,
            ext_capacity: self.params.ext_geometry.capacity_summary(),
            final_level_slots,
            records,
        }
    }
}

/// Convenience wrapper: build and run an engine over `requests`.
pub fn run(params: &SimParams, requests: &[MemoryRequest]) -> Result<RunOutput, EngineError> {
    Ok(Engine::new(params, requests)?.run())
}
