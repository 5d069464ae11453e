//! End-to-end checks of the command-line interface: exit codes, artifact
//! files, error reporting, and byte-for-byte reproducibility of batch runs.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmpc"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, text).expect("config written");
    path.to_string_lossy().into_owned()
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{} readable: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{} is JSON: {e}", path.display()))
}

/// Scalar plant with a small disturbance box; certifiable at horizon 2.
const FEASIBLE_SCALAR: &str = r#"{
    "problem": "explicit",
    "explicit": {
        "a": [[1.0]],
        "b": [[1.0]],
        "d": [[1.0]],
        "state_set": {"normals": [[1.0], [-1.0]], "offsets": [1.0, 1.0]},
        "input_set": {"normals": [[1.0], [-1.0]], "offsets": [1.0, 1.0]},
        "model": {
            "independent_map": [[1.0]],
            "independent_set": {"normals": [[1.0], [-1.0]], "offsets": [0.05, 0.05]},
            "terms": [{
                "channel_map": [[0.5]],
                "state_map": [[1.0]],
                "input_map": [[1.0]],
                "c0": 0.01, "cx": 0.1, "cu": 0.2
            }]
        },
        "horizon": 2,
        "lambda": 0.5
    },
    "x0": [0.5],
    "steps": 10
}"#;

/// Same plant with a disturbance box too wide for the window: the two-step
/// offsets alone exceed the state bound, so no state is feasible.
const INFEASIBLE_SCALAR: &str = r#"{
    "problem": "explicit",
    "explicit": {
        "a": [[1.0]],
        "b": [[1.0]],
        "d": [[1.0]],
        "state_set": {"normals": [[1.0], [-1.0]], "offsets": [1.0, 1.0]},
        "input_set": {"normals": [[1.0], [-1.0]], "offsets": [1.0, 1.0]},
        "model": {
            "independent_map": [[1.0]],
            "independent_set": {"normals": [[1.0], [-1.0]], "offsets": [0.7, 0.7]},
            "terms": []
        },
        "horizon": 2
    }
}"#;

#[test]
fn certify_writes_a_passing_certificate() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), FEASIBLE_SCALAR);
    let out = run(&["certify", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = read_json(&dir.path().join("certificate.json"));
    assert_eq!(report["passed"], serde_json::json!(true));
    assert!(
        report["config_hash"].as_str().is_some_and(|h| h.len() == 64),
        "certificate carries the config digest"
    );
    assert_eq!(report["checks"].as_array().map(Vec::len), Some(2));
}

#[test]
fn certify_exits_one_on_a_negative_result() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), INFEASIBLE_SCALAR);
    let out = run(&["certify", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "negative certification must exit 1");
    let report = read_json(&dir.path().join("certificate.json"));
    assert_eq!(report["passed"], serde_json::json!(false));
}

#[test]
fn variant_override_switches_the_model() {
    // the same infeasible problem certifies once the variant override
    // replaces the disturbance model with the zero set
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), INFEASIBLE_SCALAR);
    let out = run(&[
        "certify",
        "--config",
        &config,
        "--out",
        dir.path().to_str().unwrap(),
        "--variant",
        "nominal",
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = read_json(&dir.path().join("certificate.json"));
    assert_eq!(report["passed"], serde_json::json!(true));
}

#[test]
fn certify_covers_the_built_in_scenario() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), r#"{"problem": "satellite"}"#);
    let out = run(&["certify", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = read_json(&dir.path().join("certificate.json"));
    assert_eq!(report["passed"], serde_json::json!(true));
    assert_eq!(report["checks"].as_array().map(Vec::len), Some(64));
}

#[test]
fn parse_errors_exit_two_with_the_offending_field() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), r#"{"problem": "satellite", "horizons": 4}"#);
    let out = run(&["certify", "--config", &config]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("\"error\":\"parse\""), "stderr: {stderr}");
    assert!(stderr.contains("horizons"), "stderr: {stderr}");
}

#[test]
fn validation_errors_exit_two_with_field_paths() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"problem": "satellite", "satellite": {"sample_period": -1.0}}"#,
    );
    let out = run(&["certify", "--config", &config]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("\"error\":\"validation\""), "stderr: {stderr}");
    assert!(stderr.contains("satellite.sample_period"), "stderr: {stderr}");
}

#[test]
fn missing_config_exits_two_with_an_io_error() {
    let out = run(&["certify", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("\"error\":\"io\""), "stderr: {stderr}");
}

#[test]
fn simulate_writes_a_stamped_trace() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), FEASIBLE_SCALAR);
    let out = run(&["simulate", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).expect("trace written");
    assert!(trace.starts_with("# config_hash "), "trace lacks the digest header");
    let report = read_json(&dir.path().join("run.json"));
    assert_eq!(report["completed"], serde_json::json!(true));
    assert_eq!(report["violations"], serde_json::json!(0));
}

#[test]
fn montecarlo_batches_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), FEASIBLE_SCALAR);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        std::fs::create_dir(out_dir).unwrap();
        let out = run(&[
            "montecarlo",
            "--config",
            &config,
            "--out",
            out_dir.to_str().unwrap(),
            "--runs",
            "3",
            "--steps",
            "8",
        ]);
        assert!(
            out.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let runs_a = std::fs::read(out_a.join("runs.csv")).unwrap();
    let runs_b = std::fs::read(out_b.join("runs.csv")).unwrap();
    assert_eq!(runs_a, runs_b, "run table must be byte-identical across reruns");
    let stats_a = read_json(&out_a.join("stats.json"));
    let stats_b = read_json(&out_b.join("stats.json"));
    assert_eq!(stats_a["content_hash"], stats_b["content_hash"]);
    assert!(
        stats_a["content_hash"].as_str().is_some_and(|h| h.len() == 64),
        "stats carry a content digest"
    );
    assert_eq!(stats_a["config_hash"], stats_b["config_hash"]);
}
