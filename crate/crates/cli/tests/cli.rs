//! End-to-end subcommand tests against the bundled fixtures: exit codes,
//! output schemas, and byte-level reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_metashadow"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn metashadow")
}

fn assert_code(output: &Output, expected: i32) {
    assert_eq!(
        output.status.code(),
        Some(expected),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn povm_check_passes_for_all_designs() {
    for design in ["octa6", "cube8", "icosa12"] {
        let output = run(&["povm-check", "--design", design]);
        assert_code(&output, 0);
        let report: serde_json::Value =
            serde_json::from_slice(&output.stdout).expect("report JSON on stdout");
        assert!(report["frame_potential"].is_f64());
        assert!(report["channel_residual"].as_f64().unwrap() < 1e-9);
    }
}

#[test]
fn povm_check_rejects_unknown_design_as_usage_error() {
    let output = run(&["povm-check", "--design", "tetra4"]);
    assert_code(&output, 64);
}

#[test]
fn fit_ports_writes_operator_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ports.json");
    let transmission = fixtures().join("device_transmission.csv");
    let output = run(&[
        "fit-ports",
        "--transmission",
        transmission.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_code(&output, 0);
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(parsed["gratings"].as_array().unwrap().len(), 3);
}

#[test]
fn emulate_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let transmission = fixtures().join("device_transmission.csv");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let output = run(&[
            "emulate",
            "--transmission",
            transmission.to_str().unwrap(),
            "--shots",
            "5000",
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_code(&output, 0);
    }
    let bytes_a = std::fs::read(&a).unwrap();
    assert_eq!(bytes_a, std::fs::read(&b).unwrap());
    let text = String::from_utf8(bytes_a).unwrap();
    assert!(text.starts_with("input,"));
    assert_eq!(text.lines().count(), 7, "header plus six probe rows");
}

#[test]
fn calibrate_recovers_noise_and_writes_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lambda.json");
    let diag = dir.path().join("diag.json");
    let counts = fixtures().join("device_counts.csv");
    let output = run(&[
        "calibrate",
        "--counts",
        counts.to_str().unwrap(),
        "--starts",
        "8",
        "--out",
        out.to_str().unwrap(),
        "--diagnostics",
        diag.to_str().unwrap(),
    ]);
    assert_code(&output, 0);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("probe H: fidelity"));
    let lambda: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let p_bf = lambda["bases"][0]["p_bf"].as_f64().unwrap();
    assert!((p_bf - 0.012466).abs() < 5e-3, "p_bf(z) = {p_bf}");
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&diag).unwrap()).unwrap();
    assert!(diag["converged"].as_bool().unwrap());
    assert_eq!(diag["per_probe_fidelity"].as_array().unwrap().len(), 6);
}

#[test]
fn calibrate_rejects_malformed_counts() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "input,H,V,injected\nH,12,not_a_number,100\n").unwrap();
    let output = run(&[
        "calibrate",
        "--counts",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("x.json").to_str().unwrap(),
    ]);
    assert_code(&output, 65);
}

#[test]
fn validate_emits_full_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve.json");
    let output = run(&[
        "validate",
        "--transmission",
        fixtures().join("device_transmission.csv").to_str().unwrap(),
        "--noise",
        fixtures().join("device_noise.json").to_str().unwrap(),
        "--sweep",
        "32",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_code(&output, 0);
    let curve: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(curve["points"].as_array().unwrap().len(), 64);
    assert!(curve["min_fidelity"].as_f64().unwrap() > 0.9);
}

fn quick_config(dir: &Path) -> PathBuf {
    let config = dir.join("quick.json");
    std::fs::write(
        &config,
        r#"{
  "state": { "w": 2 },
  "design": "octa6",
  "noise": "../device_noise.json",
  "shots": 500,
  "reps": 4,
  "seed": 11,
  "estimator": "fidelity",
  "mitigate": "both"
}"#,
    )
    .unwrap();
    config
}

#[test]
fn run_produces_reports_values_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let configs = dir.path().join("configs");
    std::fs::create_dir_all(&configs).unwrap();
    std::fs::copy(
        fixtures().join("device_noise.json"),
        dir.path().join("device_noise.json"),
    )
    .unwrap();
    let config = quick_config(&configs);
    let out_a = dir.path().join("out_a");
    let out_b = dir.path().join("out_b");
    for out in [&out_a, &out_b] {
        let output = run(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert_code(&output, 0);
    }
    for key in ["mit", "raw"] {
        let report = std::fs::read(out_a.join(format!("report_{key}.json"))).unwrap();
        assert_eq!(
            report,
            std::fs::read(out_b.join(format!("report_{key}.json"))).unwrap(),
            "reports must be byte-identical across reruns"
        );
        let parsed: serde_json::Value = serde_json::from_slice(&report).unwrap();
        assert_eq!(parsed["values"].as_array().unwrap().len(), 4);
        let values = std::fs::read_to_string(out_a.join(format!("values_{key}.csv"))).unwrap();
        assert!(values.starts_with("rep,value\n"));
        assert_eq!(values.lines().count(), 5);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "run");
    for listed in manifest["outputs"].as_array().unwrap() {
        assert!(
            Path::new(listed.as_str().unwrap()).exists(),
            "missing output {listed}"
        );
    }
    // two input digests: the config and the referenced noise file
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn run_maps_estimation_failures_to_exit_4() {
    // p_bf = 0.5 makes the x transition singular: the forward model is
    // fine, but mitigation must refuse to invert it
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("singular.json");
    std::fs::write(
        &config,
        r#"{
  "state": { "w": 1 },
  "design": "octa6",
  "noise": { "design": "octa6", "bases": [
    { "label": "z", "p_bf": 0.0, "p_ad": 0.0, "p_pl": [0.0, 0.0] },
    { "label": "x", "p_bf": 0.5, "p_ad": 0.0, "p_pl": [0.0, 0.0] },
    { "label": "y", "p_bf": 0.0, "p_ad": 0.0, "p_pl": [0.0, 0.0] }
  ]},
  "shots": 100,
  "reps": 1,
  "estimator": "fidelity",
  "mitigate": true
}"#,
    )
    .unwrap();
    let output = run(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_code(&output, 4);
}

#[test]
fn run_saves_mitigated_tables_on_request() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(
        fixtures().join("device_noise.json"),
        dir.path().join("device_noise.json"),
    )
    .unwrap();
    let configs = dir.path().join("configs");
    std::fs::create_dir_all(&configs).unwrap();
    let config = quick_config(&configs);
    let out = dir.path().join("out");
    assert_code(
        &run(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
            "--save-tables",
        ]),
        0,
    );
    let table = std::fs::read_to_string(out.join("table_mit.csv")).unwrap();
    assert!(table.starts_with("basis_string,bit_string,probability\n"));
    // 9 basis groups x 4 outcomes for two qubits, plus the header
    assert_eq!(table.lines().count(), 37);
    let total: f64 = table
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9, "table total {total}");
}

#[test]
fn run_rejects_invalid_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{ "state": { "w": 0 } }"#).unwrap();
    let output = run(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_code(&output, 65);
}

#[test]
fn plot_hist_and_curve_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(
        fixtures().join("device_noise.json"),
        dir.path().join("device_noise.json"),
    )
    .unwrap();
    let configs = dir.path().join("configs");
    std::fs::create_dir_all(&configs).unwrap();
    let config = quick_config(&configs);
    let out = dir.path().join("out");
    assert_code(
        &run(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ]),
        0,
    );
    let svg_a = dir.path().join("a.svg");
    let svg_b = dir.path().join("b.svg");
    for svg in [&svg_a, &svg_b] {
        let output = run(&[
            "plot",
            "--kind",
            "hist",
            "--out",
            svg.to_str().unwrap(),
            out.join("report_mit.json").to_str().unwrap(),
            out.join("report_raw.json").to_str().unwrap(),
        ]);
        assert_code(&output, 0);
    }
    let bytes = std::fs::read(&svg_a).unwrap();
    assert_eq!(bytes, std::fs::read(&svg_b).unwrap());
    assert!(String::from_utf8(bytes).unwrap().starts_with("<svg"));

    // curve rendering over the two reports also succeeds
    let curve_svg = dir.path().join("curve.svg");
    assert_code(
        &run(&[
            "plot",
            "--kind",
            "curve",
            "--out",
            curve_svg.to_str().unwrap(),
            out.join("report_mit.json").to_str().unwrap(),
            out.join("report_raw.json").to_str().unwrap(),
        ]),
        0,
    );
}

#[test]
fn plot_rejects_empty_values_and_bad_schema() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    std::fs::write(
        &empty,
        r#"{
  "estimator": "fidelity", "design": "octa6", "n": 2, "shots": 10, "reps": 0,
  "seed": 1, "h": 1.0, "mitigated": true, "subsystem": null,
  "mean": 0.0, "std": 0.0, "values": [],
  "diagnostics": { "empty_groups_mean": 0.0, "negativity_mean": 0.0, "condition": 1.0 }
}"#,
    )
    .unwrap();
    let output = run(&[
        "plot",
        "--kind",
        "hist",
        "--out",
        dir.path().join("x.svg").to_str().unwrap(),
        empty.to_str().unwrap(),
    ]);
    assert_code(&output, 65);

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{\"hello\": 1}").unwrap();
    let output = run(&[
        "plot",
        "--kind",
        "hist",
        "--out",
        dir.path().join("y.svg").to_str().unwrap(),
        garbage.to_str().unwrap(),
    ]);
    assert_code(&output, 65);
}

#[test]
fn validation_curve_plots_as_svg() {
    let dir = tempfile::tempdir().unwrap();
    let curve = dir.path().join("curve.json");
    assert_code(
        &run(&[
            "validate",
            "--transmission",
            fixtures().join("device_transmission.csv").to_str().unwrap(),
            "--noise",
            fixtures().join("device_noise.json").to_str().unwrap(),
            "--sweep",
            "16",
            "--out",
            curve.to_str().unwrap(),
        ]),
        0,
    );
    let svg = dir.path().join("fig.svg");
    assert_code(
        &run(&[
            "plot",
            "--kind",
            "curve",
            "--out",
            svg.to_str().unwrap(),
            curve.to_str().unwrap(),
        ]),
        0,
    );
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.contains("xz family"));
    assert!(text.contains("0.99"));
}
