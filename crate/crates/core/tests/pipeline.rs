//! End-to-end pipeline behaviour: determinism, stage isolation and failure
//! reporting.

use std::path::{Path, PathBuf};

use coopreg::harness::{run_pipeline, synthesis_stage, DataSet, RunOptions, Scenario};
use coopreg::Error;

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap()
}

#[test]
fn reports_are_deterministic() {
    for name in ["example_exact.json", "example_noisy.json"] {
        let s = scenario(name);
        let first = run_pipeline(&s, &RunOptions::default());
        let second = run_pipeline(&s, &RunOptions::default());
        assert!(first.succeeded(), "{name}: {:?}", first.failure);
        assert_eq!(first.deterministic_json().unwrap(), second.deterministic_json().unwrap());
    }
}

#[test]
fn synthesis_on_stored_data_equals_the_pipeline_stage() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("example_noisy.json");
    let report = run_pipeline(&s, &RunOptions { csv_dir: Some(dir.path().to_path_buf()) });
    assert!(report.succeeded(), "{:?}", report.failure);
    for f in ["data_run.csv", "data_run.manifest.json", "data.json", "gains.json", "closed_loop.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let data = DataSet::load(&dir.path().join("data.json")).unwrap();
    let witnesses: Vec<_> = s.plants.iter().map(|p| (p.a.clone(), p.b.clone())).collect();
    let agents = synthesis_stage(&data, s.mode, &s.synthesis, &[], &witnesses).unwrap();
    for (a, b) in agents.iter().zip(&report.agents) {
        assert_eq!(a.k1, b.k1);
        assert_eq!(a.k2, b.k2);
        assert_eq!(a.omega, b.omega);
    }
}

#[test]
fn exosystem_with_a_stable_mode_is_rejected() {
    let text = std::fs::read_to_string(scenario_path("example_exact.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["exo"]["s"] = serde_json::json!([[-1.0, 0.0], [0.0, 1.0]]);
    let err = Scenario::from_json(&v.to_string()).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
}

#[test]
fn failures_name_their_stage() {
    let mut s = scenario("example_exact.json");
    // Zero initial states, inputs and exosystem coupling leave no state data.
    s.data.x0 = vec![vec![0.0, 0.0]; 4];
    for p in &mut s.plants {
        p.e.fill(0.0);
    }
    for input in &mut s.data.inputs {
        input.terms[0][0].amp = 0.0;
    }
    let report = run_pipeline(&s, &RunOptions::default());
    let failure = report.failure.expect("synthesis cannot succeed");
    assert_eq!(failure.stage, "synthesis");
    assert_eq!(failure.exit_code, Error::NotInformative(String::new()).exit_code());
    assert_eq!(report.completed_stages, vec!["collect", "coupling_gain"]);
}
