use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn coopreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coopreg")).args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn edit_scenario(name: &str, dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v = read_json(&scenarios().join(name));
    edit(&mut v);
    let out = dir.join(name);
    std::fs::write(&out, serde_json::to_string(&v).unwrap()).unwrap();
    out
}

#[test]
fn bounds_prints_both_bounds_and_the_oracle() {
    let out = coopreg(&["bounds", "--graph", path_str(&scenarios().join("graph_bounds_example.json")), "--oracle"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["direct"].as_f64().unwrap() - 0.0113).abs() < 5e-4);
    assert!((v["combinatorial"].as_f64().unwrap() - 0.0020).abs() < 5e-4);
    assert!((v["true_min_re_lambda_h"].as_f64().unwrap() - 1.6261).abs() < 1e-3);
}

#[test]
fn simulate_synthesize_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let out = coopreg(&[
        "simulate",
        "--scenario",
        path_str(&scenarios().join("example_exact.json")),
        "--csv",
        path_str(&data_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["data_run.csv", "data_run.manifest.json", "data.json"] {
        assert!(data_dir.join(f).exists(), "{f} missing");
    }

    let k1 = dir.path().join("k1.json");
    std::fs::write(&k1, "[[[-1,-0.5]],[[-1,-0.5]],[[-0.5,-2]],[[-0.5,-2]]]").unwrap();
    let gains = dir.path().join("gains.json");
    let report = dir.path().join("synth.json");
    let out = coopreg(&[
        "synthesize",
        "--data",
        path_str(&data_dir.join("data.json")),
        "--inject-k1",
        path_str(&k1),
        "--out",
        path_str(&report),
        "--gains-out",
        path_str(&gains),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let g = read_json(&gains);
    let k2_first = g["k2"][0][0].as_array().unwrap();
    assert!((k2_first[0].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!((k2_first[1].as_f64().unwrap() + 1.0).abs() < 1e-6);
    let k2_third = g["k2"][2][0].as_array().unwrap();
    assert!((k2_third[0].as_f64().unwrap() - 2.5).abs() < 1e-6);
    assert!(k2_third[1].as_f64().unwrap().abs() < 1e-6);

    let verified = dir.path().join("verify.json");
    let out = coopreg(&[
        "verify",
        "--scenario",
        path_str(&scenarios().join("example_exact.json")),
        "--gains",
        path_str(&gains),
        "--out",
        path_str(&verified),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&verified);
    assert!((v["mu"].as_f64().unwrap() - 134.4).abs() < 1e-9);
    assert!(v["tracking"]["sup_tail"].as_f64().unwrap().is_finite());
}

#[test]
fn synthesize_on_stored_data_matches_the_pipeline_stage() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let scenario = scenarios().join("example_exact.json");
    let out = coopreg(&[
        "pipeline",
        "--scenario",
        path_str(&scenario),
        "--csv",
        path_str(&run_dir),
        "--out",
        path_str(&dir.path().join("report.json")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let gains = dir.path().join("gains.json");
    let out = coopreg(&[
        "synthesize",
        "--data",
        path_str(&run_dir.join("data.json")),
        "--out",
        path_str(&dir.path().join("synth.json")),
        "--gains-out",
        path_str(&gains),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let standalone = read_json(&gains);
    let staged = read_json(&run_dir.join("gains.json"));
    assert_eq!(standalone["k1"], staged["k1"]);
    assert_eq!(standalone["k2"], staged["k2"]);
    assert_eq!(standalone["k1_certificates"], staged["k1_certificates"]);
}

#[test]
fn pipeline_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenarios().join("example_exact_injected.json");
    let mut reports = Vec::new();
    for k in 0..2 {
        let path = dir.path().join(format!("r{k}.json"));
        let out = coopreg(&["pipeline", "--scenario", path_str(&scenario), "--out", path_str(&path)]);
        assert_eq!(out.status.code(), Some(0));
        let mut v = read_json(&path);
        v.as_object_mut().unwrap().remove("meta");
        reports.push(serde_json::to_string(&v).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn missing_spanning_tree_is_rejected_at_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = edit_scenario("example_exact.json", dir.path(), |v| {
        // Drop the only leader edge of the first graph.
        let edges = v["graph_schedule"][0]["graph"]["edges"].as_array_mut().unwrap();
        edges.retain(|e| e[1].as_u64() != Some(0));
    });
    let out = coopreg(&["pipeline", "--scenario", path_str(&path)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("spanning tree"));
}

#[test]
fn uninformative_data_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = edit_scenario("example_exact.json", dir.path(), |v| {
        // Zero initial state and zero input leave the state data rank deficient.
        v["data"]["x0"] = serde_json::json!([[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);
        for input in v["data"]["inputs"].as_array_mut().unwrap() {
            *input = serde_json::json!([[{ "amp": 0.0 }]]);
        }
        v["plants"][0]["e"] = serde_json::json!([[0.0, 0.0], [0.0, 0.0]]);
        v["plants"][1]["e"] = serde_json::json!([[0.0, 0.0], [0.0, 0.0]]);
    });
    let report = dir.path().join("report.json");
    let out = coopreg(&["pipeline", "--scenario", path_str(&path), "--out", path_str(&report)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&report);
    assert_eq!(v["failure"]["stage"], "synthesis");
    assert_eq!(v["completed_stages"], serde_json::json!(["collect", "coupling_gain"]));
}

#[test]
fn destabilizing_gains_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let gains = dir.path().join("gains.json");
    std::fs::write(
        &gains,
        r#"{"k1": [[[50, 50]], [[50, 50]], [[50, 50]], [[50, 50]]],
            "k2": [[[0, 0]], [[0, 0]], [[0, 0]], [[0, 0]]],
            "mu": 134.4}"#,
    )
    .unwrap();
    let out = coopreg(&[
        "verify",
        "--scenario",
        path_str(&scenarios().join("example_exact.json")),
        "--gains",
        path_str(&gains),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn collect_fits_a_trajectory_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("traj.csv");
    let mut text = String::from("t,u\n");
    for k in 0..=400 {
        let t = -1.0 + 2.0 * k as f64 / 400.0;
        text.push_str(&format!("{t},{}\n", (-t).exp()));
    }
    std::fs::write(&csv, text).unwrap();
    let coeffs = dir.path().join("u.coeffs.csv");
    let out = coopreg(&[
        "collect",
        "--csv",
        path_str(&csv),
        "--degree",
        "15",
        "--window",
        "-1",
        "1",
        "--out",
        path_str(&coeffs),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&coeffs).unwrap();
    let first_row = text.lines().nth(1).unwrap();
    let c0: f64 = first_row.split(',').nth(1).unwrap().parse().unwrap();
    // Zeroth Chebyshev coefficient of exp(-t) is the modified Bessel value I0(1).
    assert!((c0 - 1.2660658777520082).abs() < 1e-6);
    assert!(coeffs.with_extension("json").exists());
}

#[test]
fn unreadable_inputs_exit_with_code_4() {
    let out = coopreg(&["pipeline", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(out.status.code(), Some(4));
    let out = coopreg(&["bounds", "--graph", "/nonexistent/graph.json"]);
    assert_eq!(out.status.code(), Some(4));
}
