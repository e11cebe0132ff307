//! Command-line front end for the cache simulator: validate configs,
//! generate traces, run single simulations, compare two configs on the same
//! trace, and sweep one parameter across a list of values.
//!
//! stdout carries human-readable progress only; all data goes to the files
//! named on the command line. Exit codes are part of the interface:
//! 0 success, 2 configuration error, 3 trace error, 4 invariant violation
//! detected during or after a run (for example a predictor false negative).

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use morpheus_sim::controller::PredictorMode;
use morpheus_sim::metrics::{comparison_to_json, to_json};
use morpheus_sim::timing::EngineError;
use morpheus_sim::{
    compare, finalize, generate, parse_trace, run, serialize_trace, MemoryRequest, RunConfig,
    SimParams, SimReport, TraceMeta, TraceSpecFile,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_TRACE: u8 = 3;
const EXIT_INVARIANT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "morpheus",
    version,
    about = "Trace-driven simulator for a GPU last-level cache extended into idle cores"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one trace under one config and write a JSON report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the same trace under two configs and write a comparison report.
    Compare {
        #[arg(long)]
        config_a: PathBuf,
        #[arg(long)]
        config_b: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one trace under a base config while varying a single parameter.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a synthetic trace from a workload spec.
    GenTrace {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config file and print the geometry it implies.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

/// An error carrying the process exit code for its class.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CliResult<T> = Result<T, Failure>;

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_CONFIG, error: error.into() }
    }
    fn trace(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_TRACE, error: error.into() }
    }
    fn invariant(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_INVARIANT, error: error.into() }
    }
    fn other(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 1, error: error.into() }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Run { config, trace, out } => cmd_run(&config, &trace, &out),
        Cmd::Compare { config_a, config_b, trace, out } => {
            cmd_compare(&config_a, &config_b, &trace, &out)
        }
        Cmd::Sweep { spec, trace, out_dir } => cmd_sweep(&spec, &trace, &out_dir),
        Cmd::GenTrace { spec, out } => cmd_gen_trace(&spec, &out),
        Cmd::Validate { config } => cmd_validate(&config),
    }
}

/// Flattens an error into a single prefixed message. Several library errors
/// already embed their cause in their `Display`, so printing them as an
/// `anyhow` chain would repeat the details; one flat string keeps stderr
/// readable.
fn flat(prefix: impl std::fmt::Display, e: impl std::fmt::Display) -> anyhow::Error {
    anyhow!("{prefix}: {e}")
}

fn load_config(path: &Path) -> CliResult<SimParams> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::config(flat(format_args!("reading config {}", path.display()), e)))?;
    RunConfig::from_toml(&text)
        .and_then(|cfg| cfg.to_params())
        .map_err(|e| Failure::config(flat(format_args!("config {}", path.display()), e)))
}

fn load_trace(path: &Path) -> CliResult<(TraceMeta, Vec<MemoryRequest>)> {
    let file = fs::File::open(path)
        .map_err(|e| Failure::trace(flat(format_args!("opening trace {}", path.display()), e)))?;
    parse_trace(BufReader::new(file))
        .map_err(|e| Failure::trace(flat(format_args!("trace {}", path.display()), e)))
}

fn simulate(
    params: &SimParams,
    meta: &TraceMeta,
    requests: &[MemoryRequest],
) -> CliResult<SimReport> {
    let out = run(params, requests).map_err(|e| match e {
        EngineError::UnsortedRequests => Failure::trace(e),
        other => Failure::config(other),
    })?;
    finalize(params, meta, requests, &out).map_err(|e| Failure::invariant(anyhow!("{e}")))
}

/// Writes a data file, creating parent directories as needed.
fn write_out(path: &Path, data: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))
                .map_err(Failure::other)?;
        }
    }
    fs::write(path, data)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::other)
}

fn cmd_run(config: &Path, trace: &Path, out: &Path) -> CliResult<()> {
    let params = load_config(config)?;
    let (meta, requests) = load_trace(trace)?;
    println!("loaded {} requests from {}", requests.len(), trace.display());
    let report = simulate(&params, &meta, &requests)?;
    write_out(out, to_json(&report))?;
    println!(
        "run complete: miss rate {:.4}, mean latency {:.1} ns, {} dram bytes",
        report.misses.miss_rate, report.latency.overall.mean_ns, report.traffic.dram_bytes
    );
    println!("report -> {}", out.display());
    Ok(())
}

fn cmd_compare(config_a: &Path, config_b: &Path, trace: &Path, out: &Path) -> CliResult<()> {
    let params_a = load_config(config_a)?;
    let params_b = load_config(config_b)?;
    let (meta, requests) = load_trace(trace)?;
    println!("loaded {} requests from {}", requests.len(), trace.display());
    let baseline = simulate(&params_a, &meta, &requests)?;
    println!("baseline ({}) done", config_a.display());
    let variant = simulate(&params_b, &meta, &requests)?;
    println!("variant ({}) done", config_b.display());
    let comparison = compare(&baseline, &variant).map_err(Failure::invariant)?;
    write_out(out, comparison_to_json(&comparison))?;
    let d = &comparison.deltas;
    println!(
        "variant vs baseline: MPKI {:+.1}% (reduction {:.1}%), mean latency {:+.1}%, energy {:+.1}%",
        -d.mpki_reduction_percent,
        d.mpki_reduction_percent,
        d.mean_latency_change_percent,
        d.energy_change_percent
    );
    println!("comparison -> {}", out.display());
    Ok(())
}

fn cmd_gen_trace(spec: &Path, out: &Path) -> CliResult<()> {
    let text = fs::read_to_string(spec)
        .map_err(|e| Failure::config(flat(format_args!("reading trace spec {}", spec.display()), e)))?;
    let spec_file = TraceSpecFile::from_toml(&text)
        .map_err(|e| Failure::config(flat(format_args!("trace spec {}", spec.display()), e)))?;
    let workload = spec_file.to_spec().map_err(Failure::config)?;
    let (mut meta, requests) = generate(&workload).map_err(Failure::config)?;
    meta.total_instructions = spec_file.total_instructions();
    let mut buf = Vec::new();
    serialize_trace(&meta, &requests, &mut buf).map_err(Failure::other)?;
    write_out(out, buf)?;
    println!("wrote {} requests -> {}", requests.len(), out.display());
    Ok(())
}

fn cmd_validate(config: &Path) -> CliResult<()> {
    let params = load_config(config)?;
    let conv = &params.conv_geometry;
    println!(
        "config OK: conventional LLC {} KiB, {}-way, {} partitions",
        conv.total_bytes / 1024,
        conv.ways,
        params.partitions
    );
    let cap = params.ext_geometry.capacity_summary();
    if cap.cache_mode_sm_count == 0 {
        println!("extended LLC disabled (no cache-mode SMs)");
    } else {
        println!(
            "extended LLC: {} cache-mode SMs x {} sets (rf sets {} blocks, l1 sets {} blocks) = {} KiB/SM, {} KiB total",
            cap.cache_mode_sm_count,
            cap.sets_per_sm,
            cap.rf_blocks_per_set,
            cap.l1_blocks_per_set,
            cap.usable_bytes_per_sm / 1024,
            cap.total_bytes / 1024
        );
    }
    let mode = match params.predictor_mode {
        PredictorMode::Off => "off",
        PredictorMode::Bloom => "bloom",
        PredictorMode::Perfect => "perfect",
    };
    println!(
        "predictor {mode}, compression {}",
        if params.compression { "on" } else { "off" }
    );
    Ok(())
}

/// One-parameter sweep description: a base config, a dotted key, and the
/// values to try. The config path is resolved relative to the spec file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSpecFile {
    config: PathBuf,
    parameter: String,
    values: Vec<toml::Value>,
}

#[derive(Serialize)]
struct SweepIndex {
    parameter: String,
    trace_fingerprint: String,
    runs: Vec<IndexEntry>,
}

#[derive(Serialize)]
struct IndexEntry {
    value: String,
    report: String,
    miss_rate: f64,
    ext_capacity_bytes: u64,
}

fn render_value(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Worker count for a sweep: `MORPHEUS_SIM_THREADS` if set, otherwise the
/// machine's available parallelism, never more than there are jobs.
fn sweep_threads(jobs: usize) -> CliResult<usize> {
    let cap = match std::env::var("MORPHEUS_SIM_THREADS") {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&v| v >= 1)
            .ok_or_else(|| {
                Failure::config(anyhow!("MORPHEUS_SIM_THREADS must be a positive integer, got `{s}`"))
            })?,
        Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    Ok(cap.min(jobs).max(1))
}

fn cmd_sweep(spec: &Path, trace: &Path, out_dir: &Path) -> CliResult<()> {
    let text = fs::read_to_string(spec)
        .map_err(|e| Failure::config(flat(format_args!("reading sweep spec {}", spec.display()), e)))?;
    let spec_file: SweepSpecFile = toml::from_str(&text)
        .map_err(|e| Failure::config(flat(format_args!("sweep spec {}", spec.display()), e)))?;
    if spec_file.values.is_empty() {
        return Err(Failure::config(anyhow!(
            "sweep spec lists no values for {}",
            spec_file.parameter
        )));
    }
    let base_path = spec.parent().unwrap_or(Path::new(".")).join(&spec_file.config);
    let base_text = fs::read_to_string(&base_path).map_err(|e| {
        Failure::config(flat(format_args!("reading base config {}", base_path.display()), e))
    })?;

    // Build every config up front so a bad value exits before any run starts.
    let rendered: Vec<String> = spec_file.values.iter().map(render_value).collect();
    let mut all_params = Vec::with_capacity(rendered.len());
    for value in &rendered {
        let override_pair = [(spec_file.parameter.clone(), value.clone())];
        let params = RunConfig::from_toml_with_overrides(&base_text, &override_pair)
            .and_then(|cfg| cfg.to_params())
            .map_err(|e| {
                Failure::config(flat(
                    format_args!("sweep value {}={value}", spec_file.parameter),
                    e,
                ))
            })?;
        all_params.push(params);
    }

    let (meta, requests) = load_trace(trace)?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .map_err(Failure::other)?;

    let jobs = all_params.len();
    let threads = sweep_threads(jobs)?;
    println!(
        "sweeping {} over {} value(s) with {} worker(s), {} requests",
        spec_file.parameter,
        jobs,
        threads,
        requests.len()
    );

    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<CliResult<IndexEntry>>>> =
        (0..jobs).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs {
                    break;
                }
                let file = format!("run_{i:02}.json");
                let result = simulate(&all_params[i], &meta, &requests).and_then(|report| {
                    write_out(&out_dir.join(&file), to_json(&report))?;
                    println!(
                        "  {}={} -> {} (miss rate {:.4})",
                        spec_file.parameter, rendered[i], file, report.misses.miss_rate
                    );
                    Ok(IndexEntry {
                        value: rendered[i].clone(),
                        report: file,
                        miss_rate: report.misses.miss_rate,
                        ext_capacity_bytes: report.capacity.total_bytes,
                    })
                });
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });

    let mut runs = Vec::with_capacity(jobs);
    for slot in slots {
        runs.push(slot.into_inner().unwrap().expect("every sweep job runs")?);
    }
    let fingerprint = morpheus_sim::trace::fingerprint(&meta, &requests);
    let index = SweepIndex {
        parameter: spec_file.parameter,
        trace_fingerprint: format!("{fingerprint:016x}"),
        runs,
    };
    let index_path = out_dir.join("index.json");
    let mut body = serde_json::to_string_pretty(&index).map_err(Failure::other)?;
    body.push('\n');
    write_out(&index_path, body)?;
    println!("sweep complete: index -> {}", index_path.display());
    Ok(())
}
