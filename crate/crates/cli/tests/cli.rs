use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use convbss::signal::{apply_mimo_fir, Distribution};
use convbss::{align_to_outputs, separate, SeparationConfig, SimulationSpec};
use convbss_cli::commands::{evaluate_signals, MixingFile, UnmixingFile};
use convbss_cli::config::RunConfig;
use convbss_cli::io::{read_json, read_signal, rows_matrix};
use serde_json::Value;

fn convbss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convbss")).args(args).output().unwrap()
}

fn convbss_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convbss")).args(args).env(key, value).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_run_config() -> RunConfig {
    RunConfig {
        simulation: SimulationSpec {
            distributions: vec![Distribution::Uniform, Distribution::Laplacian],
            channels: 2,
            len: 12_000,
            coloring_len: 1,
            mixing_order: 2,
            seed: 5,
        },
        separation: SeparationConfig {
            embed_order: 8,
            lag_window: Some(16),
            rank_threshold: 0.995,
            seed: 5,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn write_config(dir: &Path, config: &RunConfig) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, config.to_toml().unwrap()).unwrap();
    path
}

fn schema_errors(schema_file: &str, instance: &Value) -> Vec<String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(schema_file);
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    validator.iter_errors(instance).map(|e| e.to_string()).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "status {:?}\n{}", out.status, String::from_utf8_lossy(&out.stderr));
}

/// Simulates into `dir/sim` and separates into `dir/sep`.
fn simulate_and_separate(dir: &Path, config: &RunConfig) -> (PathBuf, PathBuf) {
    let cfg = write_config(dir, config);
    let sim = dir.join("sim");
    let sep = dir.join("sep");
    assert_ok(&convbss(&["simulate", "--config", s(&cfg), "--out", s(&sim)]));
    let obs = sim.join("observations.csv");
    assert_ok(&convbss(&["separate", "--config", s(&cfg), "--input", s(&obs), "--out", s(&sep)]));
    (sim, sep)
}

#[test]
fn simulate_is_deterministic_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_run_config());
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        assert_ok(&convbss(&["simulate", "--config", s(&cfg), "--out", s(&out)]));
    }
    let names = ["innovations.csv", "sources.csv", "observations.csv", "source_images.csv", "mixing.json"];
    for name in names {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }

    let sim = dir.path().join("a");
    let mixing: MixingFile = read_json(&sim.join("mixing.json")).unwrap();
    let sources = read_signal(&sim.join("sources.csv")).unwrap();
    let observations = read_signal(&sim.join("observations.csv")).unwrap();
    assert_eq!(apply_mimo_fir(&mixing.mixing, &sources).unwrap(), observations);

    let images = read_signal(&sim.join("source_images.csv")).unwrap();
    assert_eq!(images.channels(), 4);
    let sum = images.select(&[0, 1]).unwrap().into_samples() + images.select(&[2, 3]).unwrap().samples();
    assert!((sum - observations.samples()).amax() <= 1e-12);
}

#[test]
fn underdetermined_simulation_warns() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_run_config();
    config.simulation.distributions.push(Distribution::BernoulliSign);
    config.simulation.len = 500;
    let cfg = write_config(dir.path(), &config);
    let out = convbss(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("underdetermined"));
}

#[test]
fn chained_pipeline_matches_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_run_config();
    let (sim_dir, sep_dir) = simulate_and_separate(dir.path(), &config);

    let sim = convbss::simulate(&config.simulation).unwrap();
    let memory = separate(&sim.observations, &config.separation, 2).unwrap();
    let outputs = read_signal(&sep_dir.join("outputs.csv")).unwrap();
    assert!((outputs.samples() - memory.outputs.samples()).amax() <= 1e-9);

    let unmixing: UnmixingFile = read_json(&sep_dir.join("unmixing.json")).unwrap();
    assert!((rows_matrix(&unmixing.rows).unwrap() - memory.model.unmixing()).amax() <= 1e-9);

    let report = json(&sep_dir.join("report.json"));
    assert_eq!(report["converged"], Value::Bool(true));
    assert_eq!(report["frame_offset"], 7);
    assert!(schema_errors("report.schema.json", &report).is_empty());

    let eval_dir = dir.path().join("eval");
    let cfg = dir.path().join("run.toml");
    assert_ok(&convbss(&[
        "evaluate", "--config", s(&cfg),
        "--outputs", s(&sep_dir.join("outputs.csv")),
        "--truths", s(&sim_dir.join("innovations.csv")),
        "--out", s(&eval_dir),
    ]));
    let evaluation = json(&eval_dir.join("evaluation.json"));
    let errors = schema_errors("evaluation.schema.json", &evaluation);
    assert!(errors.is_empty(), "{errors:?}");

    let truths = align_to_outputs(&sim.innovations, &config.separation).unwrap();
    let expected = evaluate_signals(&memory.outputs, &truths, &config.separation, None).unwrap();
    assert!((evaluation["min_correlation"].as_f64().unwrap() - expected.min_correlation).abs() <= 1e-9);
    assert!(expected.min_correlation >= 0.9);
    let de = evaluation["diagonalization_error"].as_f64().unwrap();
    assert!((de - expected.diagonalization_error.unwrap()).abs() <= 1e-9);
    assert!(eval_dir.join("series_output0_truth0.csv").exists() || eval_dir.join("series_output0_truth1.csv").exists());
}

#[test]
fn defaults_apply_when_flags_are_omitted() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert_ok(&convbss(&["simulate", "--len", "3000", "--out", s(&sim)]));
    let sep = dir.path().join("sep");
    let out = convbss(&[
        "separate", "--input", s(&sim.join("observations.csv")), "--embed-order", "4", "--sources", "1",
        "--out", s(&sep),
    ]);
    assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&sep.join("report.json"));
    assert_eq!(report["config"]["rank_threshold"], 0.99995);
    assert_eq!(report["config"]["tol"], 1e-7);
    assert_eq!(report["config"]["lag_window"], Value::Null);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = convbss(&["separate", "--input", "/nonexistent/obs.csv", "--out", s(dir.path())]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("obs.csv"));

    assert_eq!(convbss(&["separate", "--bogus"]).status.code(), Some(1));
    assert_eq!(convbss(&["--help"]).status.code(), Some(0));
    assert_eq!(convbss(&["separate", "--mode", "parallel"]).status.code(), Some(1));

    let sim = dir.path().join("sim");
    assert_ok(&convbss(&["simulate", "--len", "2000", "--out", s(&sim)]));
    let obs = sim.join("observations.csv");
    let capped = dir.path().join("capped");
    let out = convbss(&[
        "separate", "--input", s(&obs), "--embed-order", "4", "--alpha", "0.995", "--max-iter", "1",
        "--out", s(&capped),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(capped.join("outputs.csv").exists());
    assert_eq!(json(&capped.join("report.json"))["converged"], Value::Bool(false));

    let bad_threads = convbss_env(&["simulate", "--len", "100", "--out", s(&sim)], "CONVBSS_THREADS", "many");
    assert_eq!(bad_threads.status.code(), Some(1));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_run_config();
    let (sim, sep) = simulate_and_separate(dir.path(), &config);
    let cfg = dir.path().join("run.toml");
    let single = dir.path().join("single");
    let out = convbss_env(
        &["separate", "--config", s(&cfg), "--input", s(&sim.join("observations.csv")), "--out", s(&single)],
        "CONVBSS_THREADS",
        "1",
    );
    assert_ok(&out);
    assert_eq!(std::fs::read(sep.join("outputs.csv")).unwrap(), std::fs::read(single.join("outputs.csv")).unwrap());
}

#[test]
fn reconstruct_contributions() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_run_config();
    let (sim, sep) = simulate_and_separate(dir.path(), &config);
    let cfg = dir.path().join("run.toml");
    let rec = dir.path().join("rec");
    assert_ok(&convbss(&[
        "reconstruct", "--config", s(&cfg),
        "--outputs", s(&sep.join("outputs.csv")),
        "--observations", s(&sim.join("observations.csv")),
        "--out", s(&rec),
    ]));
    let c0 = read_signal(&rec.join("contribution_s0.csv")).unwrap();
    let c1 = read_signal(&rec.join("contribution_s1.csv")).unwrap();
    let observed = align_to_outputs(&read_signal(&sim.join("observations.csv")).unwrap(), &config.separation).unwrap();
    let total = c0.samples() + c1.samples();
    for j in 0..2 {
        let err = (total.row(j) - observed.samples().row(j)).norm() / observed.samples().row(j).norm();
        assert!(err <= 0.15, "channel {j}: {err}");
    }
    let residuals = std::fs::read_to_string(rec.join("residuals.csv")).unwrap();
    assert_eq!(residuals.lines().count(), 5);

    let zero = dir.path().join("zero");
    assert_ok(&convbss(&[
        "reconstruct", "--config", s(&cfg), "--lag-window", "0",
        "--outputs", s(&sep.join("outputs.csv")),
        "--observations", s(&sim.join("observations.csv")),
        "--out", s(&zero),
    ]));

    let wrong = convbss(&[
        "reconstruct", "--config", s(&cfg),
        "--outputs", s(&sep.join("outputs.csv")),
        "--observations", s(&rec.join("contribution_s0.csv")), s(&sim.join("sources.csv")),
        "--out", s(&zero),
    ]);
    assert_eq!(wrong.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&wrong.stderr).contains("samples"));
}

#[test]
fn evaluating_outputs_against_themselves() {
    let dir = tempfile::tempdir().unwrap();
    let (_, sep) = simulate_and_separate(dir.path(), &small_run_config());
    let eval = dir.path().join("eval");
    let outputs = sep.join("outputs.csv");
    assert_ok(&convbss(&["evaluate", "--outputs", s(&outputs), "--truths", s(&outputs), "--out", s(&eval)]));
    let report = json(&eval.join("evaluation.json"));
    assert_eq!(report["permutation"], serde_json::json!([0, 1]));
    for entry in report["per_source"].as_array().unwrap() {
        assert_eq!(entry["sir_db"], 99.0);
        assert_eq!(entry["lag"], 0);
    }
    assert!(schema_errors("evaluation.schema.json", &report).is_empty());
}

#[test]
fn wav_round_trip_through_separation() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_run_config();
    config.format = convbss_cli::io::Format::Wav;
    let (_, sep) = simulate_and_separate_wav(dir.path(), &config);
    let outputs = read_signal(&sep.join("outputs.wav")).unwrap();
    assert_eq!(outputs.channels(), 2);
    assert_eq!(outputs.len(), 12_000 - 7);
}

fn simulate_and_separate_wav(dir: &Path, config: &RunConfig) -> (PathBuf, PathBuf) {
    let cfg = write_config(dir, config);
    let sim = dir.join("sim");
    let sep = dir.join("sep");
    assert_ok(&convbss(&["simulate", "--config", s(&cfg), "--out", s(&sim)]));
    let obs = sim.join("observations.wav");
    let out = convbss(&["separate", "--config", s(&cfg), "--input", s(&obs), "--out", s(&sep)]);
    assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&out.stderr));
    (sim, sep)
}
