//! Run configuration: a sectioned key=value file (TOML) in which every
//! default reproduces the calibrated desktop-GPU baseline, so an empty
//! file is a valid—and meaningful—config.
//!
//! Unknown sections or keys are rejected outright; silent typos in an
//! experiment config are worse than a parse error. Byte quantities accept
//! either plain integers or strings with binary-unit suffixes ("5MiB").

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache_core::{CacheGeometry, GeometryError};
use crate::controller::{ControllerError, PartitionMap, PredictorMode};
use crate::ext_llc::{ExtError, ExtGeometry, SetHash, DEFAULT_AUX_RESERVE};
use crate::timing::{
    BandwidthConfig, EnergyConfig, IndirectMovMode, LatencyConfig, SimParams,
};
use crate::trace::{TraceError, TraceSpec, WorkloadKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("{cache_mode} cache-mode SMs exceed the allowed three quarters of {total} total SMs (at most {max})")]
    CacheModeBound { cache_mode: u32, total: u32, max: u32 },
    #[error("conventional cache geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("extended region: {0}")]
    Extended(#[from] ExtError),
    #[error("partitioning: {0}")]
    Partitioning(#[from] ControllerError),
    #[error("filter_bits must be a power of two between 32 and 65536, got {0}")]
    FilterBits(u32),
    #[error("filter_probes must lie in 1..=16, got {0}")]
    FilterProbes(u32),
    #[error("only 128-byte cache blocks are supported, got {0}")]
    BlockBytes(u64),
    #[error("{key} must be positive")]
    NonPositive { key: &'static str },
    #[error("{key} must be a finite positive number")]
    BadRate { key: &'static str },
    #[error("{key} must be finite and non-negative")]
    BadEnergy { key: &'static str },
    #[error("sweep parameter `{0}` is not of the form section.key")]
    BadParameter(String),
    #[error("could not parse `{value}` as a value for {param}")]
    BadValue { param: String, value: String },
    #[error("trace spec: {0}")]
    TraceSpec(#[from] TraceError),
    #[error("trace spec: kind `{0}` is not one of uniform, zipfian, strided, streaming, pointer_chase")]
    BadKind(String),
    #[error("trace spec: {0}")]
    SpecField(String),
}

/// A byte count that deserializes from `5242880`, `"5MiB"`, `"64 KiB"`,
/// or `"128"`. Serializes back to the plain integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct ByteSize(pub u64);

pub fn parse_byte_size(s: &str) -> Option<u64> {
    let t = s.trim();
    let split = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
    let (digits, unit) = t.split_at(split);
    let n: u64 = digits.parse().ok()?;
    let scale = match unit.trim() {
        "" | "B" => 1,
        "KiB" => 1 << 10,
        "MiB" => 1 << 20,
        "GiB" => 1 << 30,
        _ => return None,
    };
    n.checked_mul(scale)
}

impl<'de> Deserialize<'de> for ByteSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = ByteSize;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a byte count (integer, or string like \"5MiB\")")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<ByteSize, E> {
                Ok(ByteSize(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<ByteSize, E> {
                u64::try_from(v).map(ByteSize).map_err(|_| E::custom("byte count cannot be negative"))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<ByteSize, E> {
                parse_byte_size(v)
                    .map(ByteSize)
                    .ok_or_else(|| E::custom(format!("`{v}` is not a byte count (try \"5MiB\")")))
            }
        }
        d.deserialize_any(V)
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub total_sms: u32,
    pub partitions: u32,
    pub conv_llc_bytes: ByteSize,
    pub conv_ways: u32,
    pub block_bytes: u64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            total_sms: 68,
            partitions: 10,
            conv_llc_bytes: ByteSize(5 * 1024 * 1024),
            conv_ways: 16,
            block_bytes: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeSection {
    /// SMs handed to the cache; the highest-numbered ids are taken first,
    /// the rest keep executing the application.
    pub cache_mode_sms: u32,
}

impl Default for ModeSection {
    fn default() -> Self {
        Self { cache_mode_sms: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtendedSection {
    pub warps_per_sm: u32,
    pub rf_warps: u32,
    pub l1_warps: u32,
    pub rf_bytes_per_sm: ByteSize,
    pub l1_bytes_per_sm: ByteSize,
    /// 0 means derive from the register budget and reservation table.
    pub rf_blocks_per_set: u32,
    /// `[[warps, reserved], ...]` — registers per warp withheld for the
    /// resident helper kernel, keyed by how many warps it runs.
    pub aux_reserve: Vec<(u32, u32)>,
    pub set_hash: SetHash,
}

impl Default for ExtendedSection {
    fn default() -> Self {
        Self {
            warps_per_sm: 48,
            rf_warps: 32,
            l1_warps: 16,
            rf_bytes_per_sm: ByteSize(256 * 1024),
            l1_bytes_per_sm: ByteSize(128 * 1024),
            rf_blocks_per_set: 0,
            aux_reserve: DEFAULT_AUX_RESERVE.to_vec(),
            set_hash: SetHash::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    pub mode: PredictorMode,
    pub filter_bits: u32,
    pub filter_probes: u32,
}

impl Default for PredictorSection {
    fn default() -> Self {
        Self {
            mode: PredictorMode::Bloom,
            filter_bits: 256,
            filter_probes: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionSection {
    pub enabled: bool,
    pub epoch_cycles: u64,
}

impl Default for CompressionSection {
    fn default() -> Self {
        Self {
            enabled: false,
            epoch_cycles: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencySection {
    pub conv_hit_ns: u64,
    pub conv_miss_ns: u64,
    pub ext_hit_ns: u64,
    pub ext_miss_ns: u64,
    pub predicted_miss_ns: u64,
    pub warp_occupancy_ns: u64,
    pub indirect_mov: IndirectMovMode,
    pub software_mov_penalty_ns: u64,
}

impl Default for LatencySection {
    fn default() -> Self {
        let d = LatencyConfig::default();
        Self {
            conv_hit_ns: d.conv_hit_ns,
            conv_miss_ns: d.conv_miss_ns,
            ext_hit_ns: d.ext_hit_ns,
            ext_miss_ns: d.ext_miss_ns,
            predicted_miss_ns: d.predicted_miss_ns,
            warp_occupancy_ns: d.warp_occupancy_ns,
            indirect_mov: d.indirect_mov,
            software_mov_penalty_ns: d.software_mov_penalty_ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandwidthSection {
    pub conv_partition_bytes_per_s: f64,
    pub dram_bytes_per_s: f64,
}

impl Default for BandwidthSection {
    fn default() -> Self {
        let d = BandwidthConfig::default();
        Self {
            conv_partition_bytes_per_s: d.conv_partition_bytes_per_s,
            dram_bytes_per_s: d.dram_bytes_per_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySection {
    pub conv_pj_per_byte: f64,
    pub ext_pj_per_byte: f64,
    pub dram_pj_per_byte: f64,
}

impl Default for EnergySection {
    fn default() -> Self {
        let d = EnergyConfig::default();
        Self {
            conv_pj_per_byte: d.conv_pj_per_byte,
            ext_pj_per_byte: d.ext_pj_per_byte,
            dram_pj_per_byte: d.dram_pj_per_byte,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub ns_per_cycle: u64,
    /// Keep per-request functional records and verify them by replay.
    #[serde(default = "default_true")]
    pub collect_records: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            ns_per_cycle: 1,
            collect_records: true,
        }
    }
}

/// One experiment, fully specified. `RunConfig::default()` is the
/// conventional-only desktop baseline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometrySection,
    pub mode: ModeSection,
    pub extended: ExtendedSection,
    pub predictor: PredictorSection,
    pub compression: CompressionSection,
    pub latency: LatencySection,
    pub bandwidth: BandwidthSection,
    pub energy: EnergySection,
    pub sim: SimSection,
}

impl RunConfig {
    /// Parses and fully validates a config document.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses with `section.key = value` overrides patched in before
    /// deserialization, so an override hits exactly the same checks a
    /// hand-written config would.
    pub fn from_toml_with_overrides(
        text: &str,
        overrides: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text)?;
        for (param, value) in overrides {
            let (section, key) = param
                .split_once('.')
                .ok_or_else(|| ConfigError::BadParameter(param.clone()))?;
            let parsed = parse_toml_value(value).ok_or_else(|| ConfigError::BadValue {
                param: param.clone(),
                value: value.clone(),
            })?;
            table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| ConfigError::BadParameter(param.clone()))?
                .insert(key.to_string(), parsed);
        }
        let cfg: RunConfig = table.try_into().map_err(ConfigError::Syntax)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SM ids devoted to caching: the highest-numbered ones, leaving low
    /// ids to keep running the application.
    pub fn cache_mode_sm_ids(&self) -> Vec<u32> {
        let total = self.geometry.total_sms;
        let n = self.mode.cache_mode_sms.min(total);
        (total - n..total).collect()
    }

    fn ext_geometry(&self) -> ExtGeometry {
        let e = &self.extended;
        ExtGeometry {
            cache_mode_sms: self.cache_mode_sm_ids(),
            warps_per_sm: e.warps_per_sm,
            rf_warps: e.rf_warps,
            l1_warps: e.l1_warps,
            rf_bytes_per_sm: e.rf_bytes_per_sm.0,
            l1_bytes_per_sm: e.l1_bytes_per_sm.0,
            rf_blocks_override: (e.rf_blocks_per_set > 0).then_some(e.rf_blocks_per_set),
            aux_reserve: e.aux_reserve.clone(),
            set_hash: e.set_hash,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.geometry;
        if g.block_bytes != 128 {
            return Err(ConfigError::BlockBytes(g.block_bytes));
        }
        if g.total_sms == 0 {
            return Err(ConfigError::NonPositive { key: "geometry.total_sms" });
        }
        // Some SMs must keep issuing the work the cache exists to serve.
        let max_cache = g.total_sms * 3 / 4;
        if self.mode.cache_mode_sms > max_cache {
            return Err(ConfigError::CacheModeBound {
                cache_mode: self.mode.cache_mode_sms,
                total: g.total_sms,
                max: max_cache,
            });
        }
        let conv = CacheGeometry::new(g.conv_llc_bytes.0, g.conv_ways, g.block_bytes)?;
        let map = PartitionMap::new(g.partitions)?;

        let ext = self.ext_geometry();
        if !ext.cache_mode_sms.is_empty() {
            ext.validate()?;
            map.validate_rows(ext.set_count())?;
        }
        let _ = conv;

        let p = &self.predictor;
        if !p.filter_bits.is_power_of_two() || !(32..=65_536).contains(&p.filter_bits) {
            return Err(ConfigError::FilterBits(p.filter_bits));
        }
        if !(1..=16).contains(&p.filter_probes) {
            return Err(ConfigError::FilterProbes(p.filter_probes));
        }
        if self.compression.enabled && self.compression.epoch_cycles == 0 {
            return Err(ConfigError::NonPositive { key: "compression.epoch_cycles" });
        }
        if self.sim.ns_per_cycle == 0 {
            return Err(ConfigError::NonPositive { key: "sim.ns_per_cycle" });
        }
        let b = &self.bandwidth;
        if !(b.conv_partition_bytes_per_s.is_finite() && b.conv_partition_bytes_per_s > 0.0) {
            return Err(ConfigError::BadRate { key: "bandwidth.conv_partition_bytes_per_s" });
        }
        if !(b.dram_bytes_per_s.is_finite() && b.dram_bytes_per_s > 0.0) {
            return Err(ConfigError::BadRate { key: "bandwidth.dram_bytes_per_s" });
        }
        let en = &self.energy;
        for (key, v) in [
            ("energy.conv_pj_per_byte", en.conv_pj_per_byte),
            ("energy.ext_pj_per_byte", en.ext_pj_per_byte),
            ("energy.dram_pj_per_byte", en.dram_pj_per_byte),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::BadEnergy { key });
            }
        }
        Ok(())
    }

    /// Resolves the validated config into engine parameters.
    pub fn to_params(&self) -> Result<SimParams, ConfigError> {
        self.validate()?;
        let g = &self.geometry;
        Ok(SimParams {
            conv_geometry: CacheGeometry::new(g.conv_llc_bytes.0, g.conv_ways, g.block_bytes)?,
            partitions: g.partitions,
            ext_geometry: self.ext_geometry(),
            predictor_mode: self.predictor.mode,
            filter_bits: self.predictor.filter_bits,
            filter_probes: self.predictor.filter_probes,
            compression: self.compression.enabled,
            epoch_cycles: self.compression.epoch_cycles,
            latency: LatencyConfig {
                conv_hit_ns: self.latency.conv_hit_ns,
                conv_miss_ns: self.latency.conv_miss_ns,
                ext_hit_ns: self.latency.ext_hit_ns,
                ext_miss_ns: self.latency.ext_miss_ns,
                predicted_miss_ns: self.latency.predicted_miss_ns,
                warp_occupancy_ns: self.latency.warp_occupancy_ns,
                indirect_mov: self.latency.indirect_mov,
                software_mov_penalty_ns: self.latency.software_mov_penalty_ns,
            },
            bandwidth: BandwidthConfig {
                conv_partition_bytes_per_s: self.bandwidth.conv_partition_bytes_per_s,
                dram_bytes_per_s: self.bandwidth.dram_bytes_per_s,
            },
            energy: EnergyConfig {
                conv_pj_per_byte: self.energy.conv_pj_per_byte,
                ext_pj_per_byte: self.energy.ext_pj_per_byte,
                dram_pj_per_byte: self.energy.dram_pj_per_byte,
            },
            ns_per_cycle: self.sim.ns_per_cycle,
            collect_records: self.sim.collect_records,
        })
    }
}

/// Parses one bare TOML value ("8", "0.9", "true", "bloom" or "\"bloom\"").
/// Unquoted words become strings, since enum-valued keys are common.
fn parse_toml_value(value: &str) -> Option<toml::Value> {
    let wrapped = format!("v = {value}");
    if let Ok(t) = wrapped.parse::<toml::Table>() {
        return t.get("v").cloned();
    }
    let quoted = format!("v = {:?}", value.trim());
    quoted.parse::<toml::Table>().ok()?.get("v").cloned()
}

/// Synthetic-trace description file for `gen-trace`: a flat key=value
/// document mirroring the generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSpecFile {
    pub kind: String,
    /// Zipfian skew; required for kind = "zipfian".
    pub alpha: f64,
    /// Stride in bytes; required for kind = "strided".
    pub stride_bytes: ByteSize,
    pub footprint_bytes: ByteSize,
    pub requests: u64,
    pub write_fraction: f64,
    pub atomic_fraction: f64,
    pub seed: u64,
    pub inter_arrival_cycles: f64,
    /// When positive, the emitted trace declares
    /// `requests * instructions_per_request` total instructions.
    pub instructions_per_request: u64,
}

impl Default for TraceSpecFile {
    fn default() -> Self {
        Self {
            kind: "uniform".to_string(),
            alpha: 0.0,
            stride_bytes: ByteSize(0),
            footprint_bytes: ByteSize(1 << 20),
            requests: 100_000,
            write_fraction: 0.0,
            atomic_fraction: 0.0,
            seed: 0,
            inter_arrival_cycles: 1.0,
            instructions_per_request: 0,
        }
    }
}

impl TraceSpecFile {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let f: TraceSpecFile = toml::from_str(text)?;
        f.to_spec()?; // surfaces field errors eagerly
        Ok(f)
    }

    /// Lowers the file onto the generator's parameter struct.
    pub fn to_spec(&self) -> Result<TraceSpec, ConfigError> {
        let kind = match self.kind.as_str() {
            "uniform" => WorkloadKind::Uniform,
            "zipfian" => {
                if self.alpha <= 0.0 {
                    return Err(ConfigError::SpecField(
                        "zipfian traces need alpha > 0".to_string(),
                    ));
                }
                WorkloadKind::Zipfian { alpha: self.alpha }
            }
            "strided" => {
                if self.stride_bytes.0 == 0 {
                    return Err(ConfigError::SpecField(
                        "strided traces need stride_bytes > 0".to_string(),
                    ));
                }
                WorkloadKind::Strided { stride_bytes: self.stride_bytes.0 }
            }
            "streaming" => WorkloadKind::Streaming,
            "pointer_chase" => WorkloadKind::PointerChase,
            other => return Err(ConfigError::BadKind(other.to_string())),
        };
        let spec = TraceSpec {
            kind,
            footprint_bytes: self.footprint_bytes.0,
            request_count: self.requests,
            write_fraction: self.write_fraction,
            atomic_fraction: self.atomic_fraction,
            seed: self.seed,
            inter_arrival_cycles: self.inter_arrival_cycles,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn total_instructions(&self) -> Option<u64> {
        (self.instructions_per_request > 0)
            .then(|| self.requests * self.instructions_per_request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_baseline() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.geometry.total_sms, 68);
        assert_eq!(cfg.geometry.partitions, 10);
        assert_eq!(cfg.geometry.conv_llc_bytes.0, 5 * 1024 * 1024);
        assert_eq!(cfg.mode.cache_mode_sms, 0);
        assert_eq!(cfg.extended.warps_per_sm, 48);
        assert_eq!(cfg.extended.rf_warps, 32);
        assert_eq!(cfg.extended.l1_warps, 16);
        assert_eq!(cfg.latency.ext_hit_ns, 185);
        assert_eq!(cfg.bandwidth.dram_bytes_per_s, 700e9);
        let params = cfg.to_params().unwrap();
        assert!(params.ext_geometry.cache_mode_sms.is_empty());
    }

    #[test]
    fn sections_and_units_parse() {
        let cfg = RunConfig::from_toml(
            r#"
            [geometry]
            conv_llc_bytes = "5MiB"
            partitions = 10

            [mode]
            cache_mode_sms = 17

            [extended]
            rf_bytes_per_sm = "256 KiB"
            l1_bytes_per_sm = 131072

            [predictor]
            mode = "perfect"

            [compression]
            enabled = true

            [latency]
            indirect_mov = "software"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.geometry.conv_llc_bytes.0, 5 * 1024 * 1024);
        assert_eq!(cfg.mode.cache_mode_sms, 17);
        assert_eq!(cfg.extended.rf_bytes_per_sm.0, 256 * 1024);
        assert_eq!(cfg.extended.l1_bytes_per_sm.0, 128 * 1024);
        assert_eq!(cfg.predictor.mode, PredictorMode::Perfect);
        assert!(cfg.compression.enabled);
        assert_eq!(cfg.latency.indirect_mov, IndirectMovMode::Software);
        // 17 cache SMs are the highest-numbered ones.
        assert_eq!(cfg.cache_mode_sm_ids(), (51..68).collect::<Vec<_>>());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[geometry]\ntotal_sm = 68\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax(_)), "{err}");
        let err = RunConfig::from_toml("[geom]\ntotal_sms = 68\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax(_)), "{err}");
    }

    #[test]
    fn cache_mode_share_is_capped_at_three_quarters() {
        let ok = RunConfig::from_toml("[mode]\ncache_mode_sms = 51\n");
        assert!(ok.is_ok(), "51 of 68 is exactly 75%: {:?}", ok.err());
        let err = RunConfig::from_toml("[mode]\ncache_mode_sms = 52\n").unwrap_err();
        match err {
            ConfigError::CacheModeBound { cache_mode: 52, total: 68, max: 51 } => {}
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn byte_sizes_accept_suffixes_and_reject_noise() {
        assert_eq!(parse_byte_size("128"), Some(128));
        assert_eq!(parse_byte_size("64KiB"), Some(64 << 10));
        assert_eq!(parse_byte_size("5 MiB"), Some(5 << 20));
        assert_eq!(parse_byte_size("2GiB"), Some(2 << 30));
        assert_eq!(parse_byte_size("12kB"), None);
        assert_eq!(parse_byte_size("MiB"), None);
        assert_eq!(parse_byte_size("-4"), None);
    }

    #[test]
    fn validation_rejects_each_inconsistency_specifically() {
        let cases: &[(&str, fn(&ConfigError) -> bool)] = &[
            ("[geometry]\nblock_bytes = 64\n", |e| {
                matches!(e, ConfigError::BlockBytes(64))
            }),
            ("[geometry]\nconv_llc_bytes = 1000\n", |e| {
                matches!(e, ConfigError::Geometry(_))
            }),
            ("[geometry]\npartitions = 0\n", |e| {
                matches!(e, ConfigError::Partitioning(_))
            }),
            ("[predictor]\nfilter_bits = 100\n", |e| {
                matches!(e, ConfigError::FilterBits(100))
            }),
            ("[predictor]\nfilter_probes = 0\n", |e| {
                matches!(e, ConfigError::FilterProbes(0))
            }),
            ("[compression]\nenabled = true\nepoch_cycles = 0\n", |e| {
                matches!(e, ConfigError::NonPositive { .. })
            }),
            ("[sim]\nns_per_cycle = 0\n", |e| {
                matches!(e, ConfigError::NonPositive { .. })
            }),
            ("[bandwidth]\ndram_bytes_per_s = 0.0\n", |e| {
                matches!(e, ConfigError::BadRate { .. })
            }),
            ("[energy]\next_pj_per_byte = -1.0\n", |e| {
                matches!(e, ConfigError::BadEnergy { .. })
            }),
            // Warp split exceeding the SM's warps surfaces from the
            // extended-region validator once any SM is in cache mode.
            ("[mode]\ncache_mode_sms = 2\n[extended]\nrf_warps = 40\nl1_warps = 40\n", |e| {
                matches!(e, ConfigError::Extended(_))
            }),
        ];
        for (text, check) in cases {
            let err = RunConfig::from_toml(text).unwrap_err();
            assert!(check(&err), "config {text:?} produced unexpected error {err}");
        }
    }

    #[test]
    fn overrides_patch_like_hand_edits() {
        let over = |p: &str, v: &str| vec![(p.to_string(), v.to_string())];
        let cfg = RunConfig::from_toml_with_overrides("", &over("mode.cache_mode_sms", "6")).unwrap();
        assert_eq!(cfg.mode.cache_mode_sms, 6);

        // Enum values work unquoted and quoted.
        let cfg = RunConfig::from_toml_with_overrides("", &over("predictor.mode", "perfect")).unwrap();
        assert_eq!(cfg.predictor.mode, PredictorMode::Perfect);
        let cfg =
            RunConfig::from_toml_with_overrides("", &over("predictor.mode", "\"off\"")).unwrap();
        assert_eq!(cfg.predictor.mode, PredictorMode::Off);

        // Overridden values still go through validation...
        let err =
            RunConfig::from_toml_with_overrides("", &over("mode.cache_mode_sms", "60")).unwrap_err();
        assert!(matches!(err, ConfigError::CacheModeBound { .. }));
        // ...and unknown keys are still unknown.
        let err = RunConfig::from_toml_with_overrides("", &over("mode.cache_sms", "3")).unwrap_err();
        assert!(matches!(err, ConfigError::Syntax(_)));
        // Keys must name a section.
        let err = RunConfig::from_toml_with_overrides("", &over("cache_mode_sms", "3")).unwrap_err();
        assert!(matches!(err, ConfigError::BadParameter(_)));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.mode.cache_mode_sms = 34;
        cfg.predictor.mode = PredictorMode::Bloom;
        cfg.compression.enabled = true;
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn trace_spec_file_lowers_to_generator_parameters() {
        let f = TraceSpecFile::from_toml(
            r#"
            kind = "zipfian"
            alpha = 0.9
            footprint_bytes = "768KiB"
            requests = 200000
            write_fraction = 0.2
            seed = 7
            inter_arrival_cycles = 2.0
            instructions_per_request = 30
            "#,
        )
        .unwrap();
        let spec = f.to_spec().unwrap();
        assert_eq!(spec.kind, WorkloadKind::Zipfian { alpha: 0.9 });
        assert_eq!(spec.footprint_bytes, 768 * 1024);
        assert_eq!(spec.request_count, 200_000);
        assert_eq!(f.total_instructions(), Some(6_000_000));

        assert!(TraceSpecFile::from_toml("kind = \"zipfian\"\n").is_err());
        assert!(TraceSpecFile::from_toml("kind = \"strided\"\n").is_err());
        assert!(TraceSpecFile::from_toml("kind = \"warp_drive\"\n").is_err());
        assert!(TraceSpecFile::from_toml("knid = \"uniform\"\n").is_err());
        let plain = TraceSpecFile::from_toml("kind = \"streaming\"\n").unwrap();
        assert_eq!(plain.total_instructions(), None);
    }
}
