//! Trace-driven model of a GPU last-level cache that borrows idle cores'
//! on-chip memories as extra capacity.
//!
//! The crate simulates a banked, set-associative LLC plus an *extended*
//! region built from the register files and L1 arrays of cores placed in
//! cache mode. A per-partition controller steers each request either to the
//! conventional array or to one fully associative extended set, guided by a
//! pair of rotating Bloom filters that predict whether the extended set
//! holds the block. Optional delta compression lets each extended set hold
//! more than its nominal block count. The engine is event-driven and fully
//! deterministic: identical inputs produce byte-identical reports.

pub mod bloom;
pub mod cache_core;
pub mod compression;
pub mod config;
pub mod controller;
pub mod ext_llc;
pub mod memory;
pub mod metrics;
pub mod timing;
pub mod trace;

pub use config::{ConfigError, RunConfig, TraceSpecFile};
pub use metrics::{compare, finalize, ComparisonReport, SimReport};
pub use timing::{run, RunOutput, SimParams};
pub use trace::{generate, parse_trace, serialize_trace, MemoryRequest, TraceMeta};
