//! Golden-replay regression: a frozen trace, run under a frozen config, must
//! keep producing the byte-for-byte identical report that is checked in next
//! to it. Any change to routing, timing, accounting, or report shaping that
//! alters observable output shows up here as a diff against the fixture.

use std::fs;
use std::io::BufReader;
use std::path::PathBuf;

use morpheus_sim::trace::{TraceSpec, WorkloadKind};
use morpheus_sim::{finalize, generate, parse_trace, run, serialize_trace, RunConfig};

fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn golden_spec() -> TraceSpec {
    TraceSpec {
        kind: WorkloadKind::Zipfian { alpha: 0.9 },
        footprint_bytes: 512 * 1024,
        request_count: 4000,
        write_fraction: 0.2,
        atomic_fraction: 0.05,
        seed: 2024,
        inter_arrival_cycles: 2.0,
    }
}

#[test]
fn golden_trace_replays_to_byte_identical_report() {
    let config_text = fs::read_to_string(data_path("golden_config.toml")).unwrap();
    let params = RunConfig::from_toml(&config_text)
        .unwrap()
        .to_params()
        .unwrap();

    let trace_bytes = fs::read(data_path("golden.trace")).unwrap();
    let (meta, requests) = parse_trace(BufReader::new(trace_bytes.as_slice())).unwrap();

    // The trace file itself must round-trip exactly through the text format.
    let mut reserialized = Vec::new();
    serialize_trace(&meta, &requests, &mut reserialized).unwrap();
    assert_eq!(
        reserialized, trace_bytes,
        "trace serialization no longer reproduces the frozen trace file"
    );

    let out = run(&params, &requests).unwrap();
    let report = finalize(&params, &meta, &requests, &out).unwrap();
    let json = morpheus_sim::metrics::to_json(&report);

    let golden = fs::read_to_string(data_path("golden_report.json")).unwrap();
    assert_eq!(
        json, golden,
        "report differs from the checked-in golden JSON; if the change is \
         intentional, rerun the regenerate_golden_files test with --ignored"
    );
}

/// Rebuilds both fixture files. Run manually after an intentional
/// output-affecting change:
/// `cargo test -p morpheus-sim --test golden -- --ignored`
#[test]
#[ignore = "regenerates fixtures; run explicitly after intentional changes"]
fn regenerate_golden_files() {
    let spec = golden_spec();
    let (mut meta, requests) = generate(&spec).unwrap();
    meta.total_instructions = Some(spec.request_count * 30);

    let mut trace_bytes = Vec::new();
    serialize_trace(&meta, &requests, &mut trace_bytes).unwrap();
    fs::write(data_path("golden.trace"), &trace_bytes).unwrap();

    let config_text = fs::read_to_string(data_path("golden_config.toml")).unwrap();
    let params = RunConfig::from_toml(&config_text)
        .unwrap()
        .to_params()
        .unwrap();
    let out = run(&params, &requests).unwrap();
    let report = finalize(&params, &meta, &requests, &out).unwrap();
    fs::write(
        data_path("golden_report.json"),
        morpheus_sim::metrics::to_json(&report),
    )
    .unwrap();
}
