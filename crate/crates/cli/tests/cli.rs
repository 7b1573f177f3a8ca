use std::path::Path;
use std::process::{Command, Output};

use dwols_core::sim::{variant_spec, TRUE_PSI};
use dwols_core::Variant;
use serde_json::Value;

fn dwols(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dwols"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dwols(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_spec(dir: &Path) {
    std::fs::write(dir.join("spec.json"), variant_spec(Variant::DW1).to_json()).unwrap();
}

fn export_cohort(dir: &Path, scenario: &str, n: &str, seed: &str) {
    ok(
        dir,
        &[
            "simulate",
            "--scenario",
            scenario,
            "--n",
            n,
            "--reps",
            "1",
            "--seed",
            seed,
            "--value-population",
            "0",
            "--export-data",
            "cohort.csv",
            "--out",
            "metrics.csv",
        ],
    );
}

#[test]
fn simulate_writes_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--scenario",
        "4",
        "--n",
        "250",
        "--reps",
        "10",
        "--seed",
        "1",
    ];
    let csv = ok(dir.path(), &args);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "scenario,variant,n,M,mse,error_rate,bias_intercept,bias_K1,bias_Q,value"
    );
    assert_eq!(lines.len(), 7);
    for line in &lines[1..] {
        assert!(line.starts_with("4,") && line.contains(",250,10,"), "{line}");
    }
    assert_eq!(csv, ok(dir.path(), &args));
}

#[test]
fn variants_flag_restricts_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = ok(
        dir.path(),
        &[
            "simulate",
            "--scenario",
            "2",
            "--n",
            "80",
            "--reps",
            "3",
            "--variants",
            "DW1,OLS",
            "--value-population",
            "0",
        ],
    );
    let variants: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(variants, ["DW1", "OLS"]);
}

#[test]
fn simulate_accepts_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"gamma":[0.3,-0.6,-0.4,-0.3],"n":60,"replications":2,"seed":4,"variants":["IPT"],"value_population":0}"#,
    )
    .unwrap();
    let csv = ok(dir.path(), &["simulate", "--config", "cfg.json"]);
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().contains(",IPT,60,2,"));
}

#[test]
fn unknown_variant_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dwols(dir.path(), &["simulate", "--scenario", "1", "--variants", "DW9"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("DW9"));
}

fn analyze(dir: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["analyze", "--data", "cohort.csv", "--spec", "spec.json"];
    args.extend_from_slice(extra);
    serde_json::from_str(&ok(dir, &args)).unwrap()
}

#[test]
fn analysis_without_bootstrap_has_no_intervals() {
    let dir = tempfile::tempdir().unwrap();
    export_cohort(dir.path(), "2", "150", "3");
    write_spec(dir.path());
    let out = analyze(dir.path(), &[]);
    assert!(out.get("bootstrap").is_none());
    assert!(out["treatment_model"].is_array());
    assert!(out["visit_model"].is_array());
    assert!(out["positivity"].is_object());
    assert!(out["rule"].as_str().unwrap().starts_with("Treat with A=1 if "));
    assert_eq!(out["subjects"], 150);
}

#[test]
fn visit_weighting_alone_skips_the_treatment_model() {
    let dir = tempfile::tempdir().unwrap();
    export_cohort(dir.path(), "3", "150", "8");
    write_spec(dir.path());
    let out = analyze(dir.path(), &["--variant", "IIV"]);
    assert_eq!(out["variant"], "IIV");
    assert!(out.get("treatment_model").is_none());
    assert!(out.get("positivity").is_none());
    assert_eq!(out["visit_model"].as_array().unwrap().len(), 4);
}

#[test]
fn round_trip_interval_covers_the_truth() {
    let dir = tempfile::tempdir().unwrap();
    export_cohort(dir.path(), "4", "500", "12");
    write_spec(dir.path());
    let out = analyze(dir.path(), &["--bootstrap", "200", "--seed", "1"]);
    let intervals = out["bootstrap"]["intervals"].as_array().unwrap();
    let truth = [("A", TRUE_PSI.intercept), ("A:Q", TRUE_PSI.q), ("A:K1", TRUE_PSI.k1)];
    for (name, value) in truth {
        let i = intervals
            .iter()
            .find(|i| i["name"] == name)
            .unwrap_or_else(|| panic!("{name} in {intervals:?}"));
        let (lo, hi) = (i["lower"].as_f64().unwrap(), i["upper"].as_f64().unwrap());
        assert!(lo <= value && value <= hi, "{name}: {value} outside [{lo}, {hi}]");
    }
}

#[test]
fn utility_pairs() {
    let dir = tempfile::tempdir().unwrap();
    for (b0, bt, want) in [
        ("22", "22", "100.00"),
        ("30", "28", "106.67"),
        ("18", "19", "105.56"),
        ("60", "22", "NA"),
    ] {
        assert_eq!(ok(dir.path(), &["utility", "--bmi0", b0, "--bmi", bt]).trim(), want);
    }
}

#[test]
fn utility_rewrites_event_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bmi.csv"),
        "id,tstart,tstop,event,atrisk,A,Y,bmi0,bmi\n\
         a,0,1,1,1,0,,30,28\n\
         a,1,2,0,1,0,,30,29\n\
         b,0,1,1,1,1,,18,19\n\
         c,0,1,1,1,1,,22,55\n",
    )
    .unwrap();
    let csv = ok(dir.path(), &["utility", "--data", "bmi.csv"]);
    let ds = dwols_core::data::read_csv(csv.as_bytes(), &Default::default()).unwrap();
    let utilities: Vec<(String, f64)> = ds
        .rows()
        .iter()
        .filter(|r| r.event)
        .map(|r| (r.subject_id.clone(), r.outcome.unwrap()))
        .collect();
    assert_eq!(utilities.len(), 2);
    assert_eq!(utilities[0].0, "a");
    assert!((utilities[0].1 - (100.0 + 200.0 / 30.0)).abs() < 1e-9);
    assert!((utilities[1].1 - (100.0 + 100.0 / 18.0)).abs() < 1e-9);
}

#[test]
fn report_merges_and_rejects_empty_files() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        "simulate",
        "--scenario",
        "4",
        "--n",
        "60",
        "--reps",
        "2",
        "--value-population",
        "0",
    ];
    let mut first = base.to_vec();
    first.extend_from_slice(&["--variants", "DW1,OLS", "--out", "a.csv"]);
    ok(dir.path(), &first);
    let mut second = base.to_vec();
    second.extend_from_slice(&["--variants", "IPT", "--out", "b.csv"]);
    ok(dir.path(), &second);

    let table = ok(dir.path(), &["report", "a.csv", "b.csv"]);
    for v in ["DW1", "OLS", "IPT"] {
        assert_eq!(table.matches(&format!("| {v} ")).count(), 1, "{table}");
    }
    assert_eq!(table.matches("n = 60").count(), 1, "{table}");

    std::fs::write(dir.path().join("empty.csv"), "").unwrap();
    let out = dwols(dir.path(), &["report", "a.csv", "empty.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty.csv"));
}
