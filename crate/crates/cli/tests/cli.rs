use std::path::Path;
use std::process::Command;

use serde_json::Value;
use specnorm::{simulate, ProcessKind, ProcessSpec};
use specnorm_cli::config::DataSource;
use specnorm_cli::report::to_json;
use specnorm_cli::{parse_config, read_csv, run_pipeline, write_csv};

const SMALL: &str = "process = iid
t = 512
sigma = 3, 2, 1
measure = tvdfpca
d = 1
nu = 0.8
delta = 0.3
replications = 10000
bm_steps = 500
seed = 11
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_specnorm"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_cli(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).env_remove("SPECNORM_CACHE_DIR").output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8(out.stdout).unwrap())
}

/// Replaces every leaf by its type so only the layout is compared.
fn shape(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(m.iter().map(|(k, v)| (k.clone(), shape(v))).collect()),
        Value::Array(a) => Value::Array(a.iter().take(1).map(shape).collect()),
        Value::Number(_) => Value::String("number".into()),
        Value::String(_) => Value::String("string".into()),
        Value::Bool(_) => Value::String("bool".into()),
        Value::Null => Value::Null,
    }
}

#[test]
fn reports_are_byte_identical_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.conf", SMALL);
    let cfg = cfg.to_str().unwrap();
    let (c1, a) = run_cli(&["infer", "--config", cfg]);
    let (c2, b) = run_cli(&["infer", "--config", cfg, "--threads", "2"]);
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(a, b);
    let (_, other) = run_cli(&["infer", "--config", cfg, "--seed", "12"]);
    assert_ne!(a, other);
}

#[test]
fn report_schema_matches_golden() {
    let cfg = parse_config(SMALL).unwrap();
    let report: Value = serde_json::from_str(&to_json(&run_pipeline(&cfg, None).unwrap())).unwrap();
    let golden: Value = serde_json::from_str(include_str!("golden/infer_shape.json")).unwrap();
    assert_eq!(shape(&report), golden);
    for key in
        ["config_echo", "estimate", "V", "pivot", "ci", "relevant_test", "order", "diagnostics", "seed", "version"]
    {
        assert!(report.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn simulate_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.conf", "process = tvfar1\nt = 300\nsigma = 1, 0.3; 0.3, 2\nar = 0.5, 0.1; 0, 0.4\nar_end = -0.3, 0; 0, 0.2\nseed = 5\n");
    let csv = dir.path().join("x.csv");
    let (code, _) = run_cli(&["simulate", "--config", cfg.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert_eq!(code, 0);
    let back = specnorm_cli::ingest_csv(&csv).unwrap();
    let spec = match parse_config(&std::fs::read_to_string(&cfg).unwrap()).unwrap().source {
        DataSource::Simulated(s) => s,
        _ => unreachable!(),
    };
    assert_eq!(back, simulate(&spec).unwrap());
}

#[test]
fn csv_writer_and_reader_are_inverse() {
    let x = simulate(&ProcessSpec::new(ProcessKind::Iid { sigma: vec![1e-7, 0.0, 0.0, 3e5] }, 100, 2)).unwrap();
    let mut buf = Vec::new();
    write_csv(&x, &mut buf).unwrap();
    assert_eq!(read_csv(buf.as_slice()).unwrap(), x);
}

#[test]
fn csv_input_runs_through_measure() {
    let dir = tempfile::tempdir().unwrap();
    let x = simulate(&ProcessSpec::new(ProcessKind::Iid { sigma: vec![2.0, 0.0, 0.0, 1.0] }, 256, 4)).unwrap();
    let csv = dir.path().join("data.csv");
    write_csv(&x, std::fs::File::create(&csv).unwrap()).unwrap();
    let cfg = write(dir.path(), "m.conf", &format!("input = {}\nmeasure = stationarity\nd = 2\n", csv.display()));
    let (code, out) = run_cli(&["measure", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 0, "{out}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["measure"]["name"], "stationarity");
    let values = v["sequential"]["values"].as_array().unwrap();
    assert!(values[0].is_null());
    assert!(values.last().unwrap().is_number());
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.conf", "input = x.csv\nkappa = 0.1\n");
    let (code, out) = run_cli(&["infer", "--config", bad.to_str().unwrap()]);
    assert_eq!(code, 2);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["error"]["stage"], "config");

    let csv = write(dir.path(), "short.csv", "a,b\n1,2\n3,4\n");
    let cfg = write(dir.path(), "short.conf", &format!("input = {}\n", csv.display()));
    let (code, out) = run_cli(&["measure", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 3);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["error"]["stage"], "ingest");

    let (code, _) = run_cli(&[
        "select-d",
        "--config",
        write(dir.path(), "n.conf", "process = iid\nt = 256\nsigma = 1, 1\n").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn degenerate_path_gives_point_interval() {
    // the share at d = p is identically one, so V = 0
    let cfg =
        parse_config("process = iid\nt = 512\nsigma = 2, 1\nd = 2\nreplications = 10000\nbm_steps = 500\n").unwrap();
    let r = run_pipeline(&cfg, None).unwrap();
    assert_eq!(r.v.0, 0.0);
    assert_eq!((r.ci.lo.0, r.ci.hi.0), (r.estimate.0, r.estimate.0));
}

#[test]
fn iid_interval_covers_the_leading_share() {
    let cfg = parse_config("process = iid\nt = 4096\nsigma = 8, 4, 2, 1\nreplications = 10000\nseed = 3\n").unwrap();
    let r = run_pipeline(&cfg, None).unwrap();
    assert!(r.ci.lo.0 <= 8.0 / 15.0 && 8.0 / 15.0 <= r.ci.hi.0, "{:?}", r.ci);
}

#[test]
fn quantile_tables_are_cached() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "q.conf", "process = iid\nt = 256\nsigma = 1, 1\nmeasure = coherence\np1 = 1\np2 = 1\nreplications = 10000\nbm_steps = 500\n");
    let cache = dir.path().join("cache");
    let run = || {
        let out = bin()
            .args(["quantiles", "--config", cfg.to_str().unwrap()])
            .env("SPECNORM_CACHE_DIR", &cache)
            .output()
            .unwrap();
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap()
    };
    let first = run();
    let files: Vec<_> = std::fs::read_dir(&cache).unwrap().collect();
    assert_eq!(files.len(), 1);
    assert_eq!(run(), first);
    let v: Value = serde_json::from_str(&first).unwrap();
    assert_eq!((v["pivot"]["f_exponent"].as_i64(), v["pivot"]["g_exponent"].as_i64()), (Some(4), Some(3)));
}
