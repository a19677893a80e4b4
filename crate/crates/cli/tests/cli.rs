use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mixtsql"))
}

fn run(args: &[&str], threads: Option<usize>) -> Output {
    let mut c = bin();
    c.args(args);
    if let Some(t) = threads {
        c.env("MIXTSQL_THREADS", t.to_string());
    }
    c.output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: PathBuf) -> Vec<u8> {
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn json(path: PathBuf) -> Value {
    serde_json::from_slice(&read(path)).unwrap()
}

/// Simulated configuration-1 series of length 150 in `dir/sim`.
fn simulated(dir: &Path) -> PathBuf {
    let out = dir.join("sim");
    ok(&["simulate", "--preset", "configuration-1", "--seed", "11", "--n", "150", "--out-dir", p(&out)]);
    out.join("series.csv")
}

/// Keys and value types with numbers and strings erased; arrays reduced to
/// their length and the shape of the first element.
fn skeleton(v: &Value) -> Value {
    match v {
        Value::Null => Value::String("null".into()),
        Value::Bool(_) => Value::String("bool".into()),
        Value::Number(_) => Value::String("number".into()),
        Value::String(_) => Value::String("string".into()),
        Value::Array(a) => serde_json::json!({
            "len": a.len(),
            "item": a.first().map(skeleton).unwrap_or(Value::Null),
        }),
        Value::Object(o) => Value::Object(o.iter().map(|(k, v)| (k.clone(), skeleton(v))).collect()),
    }
}

#[test]
fn fit_output_matches_golden_schema() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path());
    let out = dir.path().join("fit");
    ok(&["fit", "--input", p(&input), "--out-dir", p(&out)]);
    let doc = json(out.join("fit.json"));
    let coefs = doc["result"]["coefficients"].as_array().unwrap();
    assert_eq!(coefs.len(), 6);
    for c in coefs {
        let (lo, est, hi) = (c["ci_low"].as_f64().unwrap(), c["estimate"].as_f64().unwrap(), c["ci_high"].as_f64().unwrap());
        assert!(lo < est && est < hi && c["se"].as_f64().unwrap() > 0.0);
    }
    assert!(doc["result"]["dispersions"]["phi1"].as_f64().unwrap() > 0.0);
    assert!(doc["result"]["dispersions"]["phi2"].as_f64().unwrap() > 0.0);
    let golden: Value = serde_json::from_str(include_str!("golden/fit_schema.json")).unwrap();
    assert_eq!(skeleton(&doc), golden, "fit.json schema drifted");
}

#[test]
fn granger_without_cross_lags_fails_with_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path());
    let out = run(
        &["granger", "--input", p(&input), "--cross-lags-2", "", "--direction", "1->2", "--out-dir", p(&dir.path().join("g"))],
        None,
    );
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "EmptyCrossLags");
}

#[test]
fn granger_reports_statistic() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path());
    let out = dir.path().join("g");
    ok(&["granger", "--input", p(&input), "--direction", "1->2", "--out-dir", p(&out)]);
    let doc = json(out.join("granger.json"));
    let r = &doc["result"];
    assert_eq!(r["df"], 1);
    assert!(r["qlr"].as_f64().unwrap() >= 0.0);
    let pv = r["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&pv));
}

#[test]
fn missing_column_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path());
    let out = run(&["fit", "--input", p(&input), "--col-y2", "cases", "--out-dir", p(dir.path())], None);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "MissingColumn");
}

#[test]
fn domain_violation_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    std::fs::write(&input, "y1,y2\n0.2,1\n0.3,-1\n").unwrap();
    let out = run(&["fit", "--input", p(&input), "--out-dir", p(dir.path())], None);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "DomainViolation");
    assert!(err["error"]["message"].as_str().unwrap().contains("row 3"));
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), read(e.path()))
        })
        .collect();
    v.sort();
    v
}

#[test]
fn repeated_runs_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path());
    let cases: Vec<Vec<&str>> = vec![
        vec!["mc-study", "--preset", "configuration-1", "--reps", "12", "--boot-B", "10", "--seed", "4"],
        vec!["simulate", "--preset", "configuration-2", "--seed", "8"],
        vec!["bootstrap", "--input", p(&input), "--boot-B", "30", "--seed", "2"],
    ];
    for (k, args) in cases.iter().enumerate() {
        let mut outputs = Vec::new();
        for (i, threads) in [Some(1), Some(4), None].into_iter().enumerate() {
            let out = dir.path().join(format!("det{k}_{i}"));
            let mut a = args.clone();
            a.extend(["--out-dir", p(&out)]);
            let o = run(&a, threads);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            outputs.push(files(&out));
        }
        assert!(!outputs[0].is_empty());
        assert_eq!(outputs[0], outputs[1], "{args:?}");
        assert_eq!(outputs[0], outputs[2], "{args:?}");
    }
}

#[test]
fn embedded_config_reproduces_the_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path());
    let first = dir.path().join("a");
    ok(&["fit", "--input", p(&input), "--own-lags-2", "1,2", "--out-dir", p(&first)]);
    let doc = json(first.join("fit.json"));
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, serde_json::to_vec(&doc["config"]).unwrap()).unwrap();
    let second = dir.path().join("b");
    ok(&["fit", "--config", p(&cfg), "--out-dir", p(&second)]);
    assert_eq!(files(&first), files(&second));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"preset": "configuration-1", "seed": 3, "n": 40}"#).unwrap();
    let out = dir.path().join("s");
    ok(&["simulate", "--config", p(&cfg), "--n", "60", "--out-dir", p(&out)]);
    let doc = json(out.join("simulate.json"));
    assert_eq!(doc["config"]["n"], 60);
    assert_eq!(doc["seed"], 3);
    let text = String::from_utf8(read(out.join("series.csv"))).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 61);
}

#[test]
fn simulated_series_round_trips_through_fit_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path());
    let opts = mixtsql_cli::ingest::IngestOptions::default();
    let s = mixtsql_cli::ingest::ingest_csv(&input, &opts).unwrap();
    assert_eq!(s.len(), 150);
    let mut buf = Vec::new();
    mixtsql_cli::ingest::write_series(&s, &[], &mut buf).unwrap();
    assert_eq!(mixtsql_cli::ingest::read_series(buf.as_slice(), &opts).unwrap(), s);
}

#[test]
fn weekly_file_of_112_rows() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("weekly.csv");
    let mut text = String::from("date,vl,cases\n");
    for w in 0..112 {
        text.push_str(&format!("w{w},{},{}\n", 0.3 + 0.2 * ((w as f64) * 0.7).sin(), 5 + (w * 7) % 11));
    }
    std::fs::write(&input, text).unwrap();
    let opts = mixtsql_cli::ingest::IngestOptions { col_y1: "vl".into(), col_y2: "cases".into(), ..Default::default() };
    assert_eq!(mixtsql_cli::ingest::ingest_csv(&input, &opts).unwrap().len(), 112);
    let out = dir.path().join("d");
    ok(&["diagnose", "--input", p(&input), "--col-y1", "vl", "--col-y2", "cases", "--max-lag", "12", "--out-dir", p(&out)]);
    let ccf = String::from_utf8(read(out.join("ccf.csv"))).unwrap();
    assert_eq!(ccf.lines().count(), 1 + 1 + 25);
}

#[test]
fn forecast_produces_one_row_per_step_and_method() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(dir.path());
    let out = dir.path().join("f");
    ok(&["forecast", "--input", p(&input), "--train-T", "120", "--out-dir", p(&out)]);
    let doc = json(out.join("forecast.json"));
    for r in doc["result"]["runs"].as_array().unwrap() {
        assert_eq!(r["forecasts"], 30);
    }
    let csv = String::from_utf8(read(out.join("forecast.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 2 + 60);
}
