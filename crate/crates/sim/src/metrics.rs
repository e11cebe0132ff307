//! Report shaping: raw run output distilled into one stable, serializable
//! document per run, plus baseline-vs-variant comparisons.
//!
//! Reports are plain JSON with a fixed field order and a mandatory schema
//! version, so golden-file tests can require byte identity. `finalize` is
//! also the release gate: it re-checks conservation, replays the functional
//! log, and refuses to produce a report from a run whose predictor ever
//! returned a false negative.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bloom::HASH_FAMILY;
use crate::controller::{
    partition_overhead_bytes, PartitionMap, PredictorMode, PredictorStats, FILTER_PAIR_BYTES,
    QUERY_LOGIC_BYTES,
};
use crate::ext_llc::CapacitySummary;
use crate::timing::{
    BandwidthConfig, EnergyConfig, LatencyClass, LatencyConfig, RawCounters, ReplayError,
    RunOutput, SimParams, TrafficBytes,
};
use crate::trace::{fingerprint, MemoryRequest, TraceMeta};

pub const SCHEMA_VERSION: u32 = 1;

/// Fixed wording baked into every report so results stay interpretable
/// without the config file that produced them.
const REPORT_NOTES: [&str; 4] = [
    "address map: block index b is conventional iff b mod (C+E) < C, where C and E \
     are the regions' capacities in blocks; partition = set mod partition count",
    "class latencies are calibrated end-to-end figures; queueing at partition ports, \
     the memory channel, and warp occupancy is modeled separately on top",
    "epoch slot shares use largest-remainder rounding; residents stranded by a \
     shrinking share are evicted, dirty ones written back",
    "predicted-miss responses are served from memory and installed into the owning \
     set off the critical path",
];

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn percent_change(baseline: f64, variant: f64) -> f64 {
    ratio(variant - baseline, baseline) * 100.0
}

/// Nearest-rank percentile of an ascending-sorted sample; 0 when empty.
fn nearest_rank(sorted: &[u64], percentile: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (percentile / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: u64,
    pub mean_ns: f64,
    pub min_ns: u64,
    pub max_ns: u64,
    pub p50_ns: u64,
    pub p90_ns: u64,
    pub p99_ns: u64,
}

impl LatencySummary {
    pub fn from_samples(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let sum: u128 = sorted.iter().map(|&v| v as u128).sum();
        Self {
            count: sorted.len() as u64,
            mean_ns: sum as f64 / sorted.len() as f64,
            min_ns: sorted[0],
            max_ns: *sorted.last().unwrap(),
            p50_ns: nearest_rank(&sorted, 50.0),
            p90_ns: nearest_rank(&sorted, 90.0),
            p99_ns: nearest_rank(&sorted, 99.0),
        }
    }
}

/// Latency distribution per service class, plus the pooled distribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub conv_hit: LatencySummary,
    pub conv_miss: LatencySummary,
    pub ext_hit: LatencySummary,
    pub ext_miss: LatencySummary,
    pub predicted_miss: LatencySummary,
    pub overall: LatencySummary,
}

impl LatencyReport {
    fn from_run(out: &RunOutput) -> Self {
        let class = |c: LatencyClass| LatencySummary::from_samples(&out.class_latencies[c.index()]);
        let mut pooled: Vec<u64> = out.class_latencies.iter().flatten().copied().collect();
        pooled.sort_unstable();
        Self {
            conv_hit: class(LatencyClass::ConvHit),
            conv_miss: class(LatencyClass::ConvMiss),
            ext_hit: class(LatencyClass::ExtHit),
            ext_miss: class(LatencyClass::ExtMiss),
            predicted_miss: class(LatencyClass::PredictedMiss),
            overall: LatencySummary::from_samples(&pooled),
        }
    }
}

/// How the misses-per-thousand figure was normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MpkiBasis {
    /// The trace declared an instruction count.
    PerKiloInstruction,
    /// No instruction count available; requests stand in and the figure is
    /// not comparable with instruction-based ones.
    PerKiloRequest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissStats {
    pub llc_hits: u64,
    pub llc_misses: u64,
    pub miss_rate: f64,
    pub mpki: f64,
    pub mpki_basis: MpkiBasis,
}

impl MissStats {
    fn new(counters: &RawCounters, instructions: Option<u64>) -> Self {
        let hits = counters.llc_hits();
        let misses = counters.llc_misses();
        let (mpki, basis) = mpki(misses, counters.requests, instructions);
        Self {
            llc_hits: hits,
            llc_misses: misses,
            miss_rate: ratio(misses as f64, (hits + misses) as f64),
            mpki,
            mpki_basis: basis,
        }
    }
}

/// Misses per thousand instructions when the trace declares how many
/// instructions it stands for, else per thousand requests.
pub fn mpki(misses: u64, requests: u64, instructions: Option<u64>) -> (f64, MpkiBasis) {
    match instructions {
        Some(n) if n > 0 => (ratio(misses as f64 * 1000.0, n as f64), MpkiBasis::PerKiloInstruction),
        _ => (ratio(misses as f64 * 1000.0, requests as f64), MpkiBasis::PerKiloRequest),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub conv_pj: f64,
    pub ext_pj: f64,
    pub dram_pj: f64,
    pub total_pj: f64,
    /// Cost of reaching the repurposed arrays relative to the local banks.
    pub ext_conv_ratio: f64,
    pub pj_per_byte: EnergyConfig,
}

impl EnergyReport {
    pub fn new(traffic: &TrafficBytes, rates: &EnergyConfig) -> Self {
        let conv_pj = traffic.conv_bytes as f64 * rates.conv_pj_per_byte;
        let ext_pj = traffic.ext_bytes as f64 * rates.ext_pj_per_byte;
        let dram_pj = traffic.dram_bytes as f64 * rates.dram_pj_per_byte;
        Self {
            conv_pj,
            ext_pj,
            dram_pj,
            total_pj: conv_pj + ext_pj + dram_pj,
            ext_conv_ratio: ratio(rates.ext_pj_per_byte, rates.conv_pj_per_byte),
            pj_per_byte: *rates,
        }
    }
}

/// Average delivered rate per resource over the whole run, in bytes/ns
/// (numerically GB/s).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub conv_gb_per_s: f64,
    pub ext_gb_per_s: f64,
    pub dram_gb_per_s: f64,
}

impl ThroughputReport {
    fn new(traffic: &TrafficBytes, end_ns: u64) -> Self {
        let over = |bytes: u64| ratio(bytes as f64, end_ns as f64);
        Self {
            conv_gb_per_s: over(traffic.conv_bytes),
            ext_gb_per_s: over(traffic.ext_bytes),
            dram_gb_per_s: over(traffic.dram_bytes),
        }
    }
}

/// Controller SRAM budget: what each partition provisions and what the
/// configured set count actually exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageReport {
    pub query_logic_bytes_per_partition: u64,
    pub filter_bytes_per_partition: u64,
    pub overhead_bytes_per_partition: u64,
    pub overhead_bytes_total: u64,
    pub status_rows_used_per_partition: u32,
    pub live_filter_bytes: u64,
}

impl StorageReport {
    pub fn new(partitions: u32, ext_sets: u32) -> Self {
        let has_ext = ext_sets > 0;
        let per_partition = partition_overhead_bytes(has_ext);
        let map = PartitionMap::new(partitions).expect("validated partition count");
        Self {
            query_logic_bytes_per_partition: QUERY_LOGIC_BYTES,
            filter_bytes_per_partition: if has_ext {
                per_partition - QUERY_LOGIC_BYTES
            } else {
                0
            },
            overhead_bytes_per_partition: per_partition,
            overhead_bytes_total: per_partition * u64::from(partitions),
            status_rows_used_per_partition: map.rows_required(ext_sets),
            live_filter_bytes: u64::from(ext_sets) * FILTER_PAIR_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorReport {
    pub mode: PredictorMode,
    pub hash_family: String,
    pub filter_bits: u32,
    pub filter_probes: u32,
    #[serde(flatten)]
    pub stats: PredictorStats,
    pub false_positive_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub conv_llc_bytes: u64,
    pub conv_ways: u32,
    pub partitions: u32,
    pub cache_mode_sm_count: u32,
    pub compression: bool,
    pub epoch_cycles: u64,
    pub ns_per_cycle: u64,
    pub latency: LatencyConfig,
    pub bandwidth: BandwidthConfig,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceInfo {
    /// FNV-1a digest over the canonical request stream, hex-encoded.
    pub fingerprint: String,
    pub requests: u64,
    pub instructions: Option<u64>,
}

/// The single structured result of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub config: ConfigEcho,
    pub trace: TraceInfo,
    pub counters: RawCounters,
    pub misses: MissStats,
    pub latency: LatencyReport,
    pub traffic: TrafficBytes,
    pub throughput: ThroughputReport,
    pub energy: EnergyReport,
    pub capacity: CapacitySummary,
    pub storage: StorageReport,
    pub predictor: PredictorReport,
    pub end_ns: u64,
    pub replay_verified: bool,
}

#[derive(Debug, Error)]
pub enum FinalizeError {
    #[error("predictor produced {0} false negatives; a prediction must never deny a resident block")]
    FalseNegatives(u64),
    #[error("counter conservation violated: {0}")]
    Conservation(String),
    #[error("functional replay failed: {0}")]
    Replay(#[from] ReplayError),
}

/// Checks every cross-counter invariant, replays the functional log when
/// one was collected, and shapes the report.
pub fn finalize(
    params: &SimParams,
    meta: &TraceMeta,
    requests: &[MemoryRequest],
    out: &RunOutput,
) -> Result<SimReport, FinalizeError> {
    let c = &out.counters;
    if out.predictor.false_negatives > 0 {
        return Err(FinalizeError::FalseNegatives(out.predictor.false_negatives));
    }
    if c.requests != requests.len() as u64 {
        return Err(FinalizeError::Conservation(format!(
            "run saw {} requests, trace holds {}",
            c.requests,
            requests.len()
        )));
    }
    if c.routed_total() != c.requests {
        return Err(FinalizeError::Conservation(format!(
            "routes sum to {}, requests {}",
            c.routed_total(),
            c.requests
        )));
    }
    let responded: u64 = out.class_latencies.iter().map(|v| v.len() as u64).sum();
    if responded != c.requests {
        return Err(FinalizeError::Conservation(format!(
            "{responded} responses for {} requests",
            c.requests
        )));
    }
    if let Some(records) = &out.records {
        if records.len() != requests.len() {
            return Err(FinalizeError::Conservation(format!(
                "{} functional records for {} requests",
                records.len(),
                requests.len()
            )));
        }
        out.verify_replay(requests)?;
    }

    let conv = params.conv_geometry;
    let report = SimReport {
        schema_version: SCHEMA_VERSION,
        config: ConfigEcho {
            conv_llc_bytes: conv.total_bytes,
            conv_ways: conv.ways,
            partitions: params.partitions,
            cache_mode_sm_count: params.ext_geometry.cache_mode_sms.len() as u32,
            compression: params.compression,
            epoch_cycles: params.epoch_cycles,
            ns_per_cycle: params.ns_per_cycle,
            latency: params.latency,
            bandwidth: params.bandwidth,
            notes: REPORT_NOTES.iter().map(|s| s.to_string()).collect(),
        },
        trace: TraceInfo {
            fingerprint: format!("{:016x}", fingerprint(meta, requests)),
            requests: c.requests,
            instructions: meta.total_instructions,
        },
        counters: *c,
        misses: MissStats::new(c, meta.total_instructions),
        latency: LatencyReport::from_run(out),
        traffic: out.traffic,
        throughput: ThroughputReport::new(&out.traffic, out.end_ns),
        energy: EnergyReport::new(&out.traffic, &params.energy),
        capacity: out.ext_capacity,
        storage: StorageReport::new(params.partitions, out.ext_capacity.set_count),
        predictor: PredictorReport {
            mode: params.predictor_mode,
            hash_family: HASH_FAMILY.to_string(),
            filter_bits: params.filter_bits,
            filter_probes: params.filter_probes,
            stats: out.predictor,
            false_positive_rate: out.predictor.false_positive_rate(),
        },
        end_ns: out.end_ns,
        replay_verified: out.records.is_some(),
    };
    Ok(report)
}

/// Pretty JSON with a trailing newline; field order and float formatting
/// are stable, so identical reports serialize byte-identically.
pub fn to_json(report: &SimReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn from_json(s: &str) -> Result<SimReport, serde_json::Error> {
    serde_json::from_str(s)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompareError {
    #[error("reports describe different traces: {baseline} vs {variant}")]
    TraceMismatch { baseline: String, variant: String },
}

/// Headline deltas, each derived from fields present in the paired
/// reports. Positive reduction/negative change mean the variant improved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub mpki_reduction_percent: f64,
    pub miss_rate_delta: f64,
    pub mean_latency_change_percent: f64,
    pub energy_change_percent: f64,
    pub dram_bytes_change_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub trace_fingerprint: String,
    pub deltas: Deltas,
    pub baseline: SimReport,
    pub variant: SimReport,
}

/// Pairs two runs of the same trace and computes headline deltas.
pub fn compare(baseline: &SimReport, variant: &SimReport) -> Result<ComparisonReport, CompareError> {
    if baseline.trace.fingerprint != variant.trace.fingerprint {
        return Err(CompareError::TraceMismatch {
            baseline: baseline.trace.fingerprint.clone(),
            variant: variant.trace.fingerprint.clone(),
        });
    }
    let deltas = Deltas {
        mpki_reduction_percent: -percent_change(baseline.misses.mpki, variant.misses.mpki),
        miss_rate_delta: variant.misses.miss_rate - baseline.misses.miss_rate,
        mean_latency_change_percent: percent_change(
            baseline.latency.overall.mean_ns,
            variant.latency.overall.mean_ns,
        ),
        energy_change_percent: percent_change(baseline.energy.total_pj, variant.energy.total_pj),
        dram_bytes_change_percent: percent_change(
            baseline.traffic.dram_bytes as f64,
            variant.traffic.dram_bytes as f64,
        ),
    };
    Ok(ComparisonReport {
        schema_version: SCHEMA_VERSION,
        trace_fingerprint: baseline.trace.fingerprint.clone(),
        deltas,
        baseline: baseline.clone(),
        variant: variant.clone(),
    })
}

pub fn comparison_to_json(report: &ComparisonReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("comparison serializes");
    s.push('\n');
    s
}
