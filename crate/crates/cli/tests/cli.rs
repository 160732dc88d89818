use serde_json::Value;
use spin_curvature::curvature::CurvatureReport;
use spin_curvature::verifier::{PoincareReport, Verdict};
use std::path::Path;
use std::process::{Command, Output};

fn spincurv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spincurv")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("bad json ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.json");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn missing_gamma_is_a_usage_error() {
    let out = spincurv(&["curvature"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("gamma"));
}

#[test]
fn gamma_at_most_one_is_rejected() {
    for g in ["1", "0.5"] {
        let out = spincurv(&["curvature", "--gamma", g]);
        assert_eq!(out.status.code(), Some(2), "gamma {g}");
        assert!(stderr(&out).contains("gamma"));
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"gamma": 2.0, "T": 0.5}"#);
    let out = spincurv(&["curvature", "--config", &cfg, "--gamma", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["config"]["gamma"], 3.0);
    assert_eq!(doc["config"]["T"], 0.5);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"gamma": 2.0, "coupling": 0.1}"#);
    let out = spincurv(&["curvature", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("coupling"));
}

#[test]
fn curvature_at_zero_coupling_round_trips() {
    let out = spincurv(&["curvature", "--gamma", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&out);
    assert_eq!(doc["kind"], "curvature");
    assert_eq!(doc["passed"], true);
    let report: CurvatureReport = serde_json::from_value(doc["result"].clone()).unwrap();
    assert!((report.rho - 0.199_795_751_560_48).abs() < 1e-12);
}

#[test]
fn poincare_passes_and_the_negative_control_fails() {
    let base = ["poincare", "--gamma", "2", "-T", "1", "--f", "product", "--samples", "200000"];
    let out = spincurv(&base);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let reports: Vec<PoincareReport> = serde_json::from_value(json(&out)["result"].clone()).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].verdict, Verdict::Pass);

    let mut neg = base.to_vec();
    neg.push("--negative-control");
    let out = spincurv(&neg);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert_eq!(json(&out)["passed"], false);
}

#[test]
fn identical_runs_match_apart_from_the_timestamp() {
    let args = ["correlation", "--gamma", "2", "-K", "0.03", "--samples", "20000", "--seed", "7"];
    let mut a = json(&spincurv(&args));
    let mut b = json(&spincurv(&args));
    for d in [&mut a, &mut b] {
        d.as_object_mut().unwrap().remove("timestamp");
    }
    assert_eq!(a, b);
}

#[test]
fn csv_goes_next_to_the_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("probe.json");
    let out = spincurv(&[
        "probe",
        "--gamma",
        "2",
        "--samples",
        "20000",
        "--t-grid",
        "1,2",
        "--csv",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(doc["kind"], "ergodic-probe");
    let mut rdr = csv::Reader::from_path(out_path.with_extension("csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().get(0), Some("T"));
    assert_eq!(rdr.records().count(), 2);
}

#[test]
fn csv_on_stdout_replaces_json() {
    let out = spincurv(&["kernel", "--gamma", "2", "-n", "2", "--csv"]);
    assert_eq!(out.status.code(), Some(0));
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 16);
    let total: f64 = rows.iter().filter(|r| &r[1] == "S1").map(|r| r[3].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-14);
}

#[test]
fn short_ring_needs_the_override() {
    let args = ["kernel", "--gamma", "2", "-K", "0.1", "-n", "3", "--samples", "2000", "-L", "5"];
    let out = spincurv(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("light cone"));
    let mut forced = args.to_vec();
    forced.push("--no-light-cone-check");
    assert_eq!(spincurv(&forced).status.code(), Some(0));
}

#[test]
fn exact_gamma_needs_zero_coupling() {
    let out = spincurv(&["gamma", "--gamma", "2", "-K", "0.1", "--source", "exact"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("source"));
}

#[test]
fn verify_runs_selected_criteria() {
    let out = spincurv(&["verify", "--only", "2,3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.contains("PASS")).count(), 2);
    assert!(text.contains("2/2 criteria pass"));
}
