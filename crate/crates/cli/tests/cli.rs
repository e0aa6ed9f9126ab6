use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use pvass_cli::report::{num, ratv, Report};
use pvass_cli::{execute, run_command, Cli};
use pvass_core::demo;
use pvass_core::numeric::rat;
use serde_json::Value;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Report {
    let argv = std::iter::once("pvass").chain(args.iter().copied());
    execute(&Cli::try_parse_from(argv).unwrap()).0
}

fn code(args: &[&str]) -> i32 {
    run_command(std::iter::once("pvass").chain(args.iter().copied()))
}

const WALK_UP: &str = r#"{"states":["p"],"rules":[
  {"src":"p","delta":[1],"weight":3,"dst":"p"},{"src":"p","delta":[-1],"weight":1,"dst":"p"}]}"#;

// τ of the counter-2 region is exactly zero: unresolved at any θ.
const UNRESOLVED: &str = r#"{"states":["p"],"rules":[
  {"src":"p","delta":[1,-1],"weight":3,"dst":"p"},{"src":"p","delta":[0,1],"weight":1,"dst":"p"},
  {"src":"p","delta":[-1,0],"weight":1,"dst":"p"}]}"#;

const ZERO_TREND: &str = r#"{"states":["p"],"rules":[
  {"src":"p","delta":[1,1],"weight":1,"dst":"p"},{"src":"p","delta":[-1,-1],"weight":1,"dst":"p"}]}"#;

fn fixtures() -> (tempfile::TempDir, [String; 6]) {
    let d = tempfile::tempdir().unwrap();
    let p = |n: &str, t: &str| write(d.path(), n, t).display().to_string();
    let files = [
        p("walk.json", WALK_UP),
        p("fig1.json", demo::FIG1_PVASS),
        p("broken.json", "{\"states\": [\"p\"], \"rules\": ["),
        p("unresolved.json", UNRESOLVED),
        p("net.json", demo::FIG1_SPN),
        p("zero.json", ZERO_TREND),
    ];
    (d, files)
}

#[test]
fn exit_codes_follow_the_contract() {
    let (d, [walk, fig1, broken, unresolved, net, zero]) = fixtures();
    let missing = d.path().join("missing.json").display().to_string();
    let cases: Vec<(Vec<&str>, i32)> = vec![
        (vec!["validate", &walk], 0),
        (vec!["validate", &net], 0),
        (vec!["chain", &fig1], 0),
        (vec!["translate-spn", &net], 0),
        (vec!["oc", &walk, "--start", "p:2"], 0),
        (vec!["tc", &fig1], 0),
        (vec!["tc", &zero], 0),
        (vec!["validate", &broken], 2),
        (vec!["chain", &missing], 2),
        (vec!["oc", &walk, "--start", "q:2"], 2),
        (vec!["oc", &fig1, "--start", "s:1"], 2),
        (vec!["translate-spn", &walk], 2),
        (vec!["chain", &fig1, "--bogus"], 2),
        (vec!["frobnicate"], 2),
        (vec!["tc", &unresolved], 3),
        (vec!["demo", "remark", "--eps", "1e-300"], 4),
    ];
    for (args, want) in cases {
        assert_eq!(code(&args), want, "{args:?}");
    }
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn failed_certificate_is_reported_with_residual() {
    let r = run(&["demo", "remark", "--eps", "1e-300"]);
    assert_eq!(r.status, "certificate-failure");
    let e = r.error.unwrap();
    assert_eq!(e.kind, "certificate-failure");
    let residual: f64 = e.residual.unwrap().parse().unwrap();
    assert!(residual > 1e-300);
}

#[test]
fn unresolved_stability_keeps_results() {
    let (_d, files) = fixtures();
    let r = run(&["tc", &files[3]]);
    assert_eq!(r.status, "analysis-failure");
    assert_eq!(r.results["stability"]["verdict"], "unresolved");
}

#[test]
fn zero_trend_is_unstable_with_witness() {
    let (_d, files) = fixtures();
    let r = run(&["tc", &files[5]]);
    assert_eq!(r.status, "ok");
    assert_eq!(r.results["stability"]["verdict"], "unstable");
    let w = r.results["stability"]["witnesses"][0].as_str().unwrap();
    assert!(w.contains("(0, 0)"), "{w}");
}

#[test]
fn rationals_are_fraction_strings() {
    assert_eq!(ratv(&rat(1, 3)), Value::String("1/3".into()));
    assert_eq!(ratv(&rat(-89, 162)), Value::String("-89/162".into()));
    assert_eq!(ratv(&rat(4, 2)), Value::String("2".into()));
    let (_d, files) = fixtures();
    let r = run(&["chain", &files[1]]);
    let b = &r.results["bsccs"][0];
    assert_eq!(b["mu"][0], "61/81");
    assert_eq!(b["trend"], serde_json::json!(["-89/162", "-89/162"]));
}

#[test]
fn floats_are_round_trip_decimal_strings() {
    for x in [1.0 / 3.0, 1e-13, 2.5e20, -0.75, 0.0] {
        assert_eq!(num(x).parse::<f64>().unwrap(), x);
    }
    assert_eq!(num(f64::INFINITY), "inf");
}

#[test]
fn report_round_trips_through_disk() {
    let (d, files) = fixtures();
    let r = run(&["oc", &files[0], "--start", "p:2"]);
    let path = d.path().join("r.json");
    r.write(&path).unwrap();
    assert_eq!(Report::read(&path).unwrap(), r);
}

#[test]
fn input_digest_matches_file() {
    let (_d, files) = fixtures();
    let r = run(&["chain", &files[1]]);
    let want = pvass_cli::report::digest(demo::FIG1_PVASS.as_bytes());
    assert_eq!(r.input_digest.as_deref(), Some(want.as_str()));
}

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pvass")).args(args).env("PVASS_THREADS", "2").output().unwrap()
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let (d, files) = fixtures();
    let out1 = d.path().join("o1");
    let out2 = d.path().join("o2");
    let args = |o: &Path| {
        vec!["--out".to_string(), o.display().to_string(), "sim".into(), files[1].clone(), "--start".into(),
             "s:1,1".into(), "--runs".into(), "6".into(), "--horizon".into(), "3000".into(), "--seed".into(), "5".into()]
    };
    let a = bin(&args(&out1).iter().map(|s| s.as_str()).collect::<Vec<_>>());
    let b = bin(&args(&out2).iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    for f in ["sim.json", "trajectories.csv"] {
        assert_eq!(std::fs::read(out1.join(f)).unwrap(), std::fs::read(out2.join(f)).unwrap(), "{f}");
    }
    // Sorted keys at the top level.
    let text = String::from_utf8(a.stdout).unwrap();
    let v: serde_json::Map<String, Value> = serde_json::from_str(&text).unwrap();
    let keys: Vec<&String> = v.keys().collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn trajectories_have_one_row_per_seen_pattern_and_checkpoint() {
    let (d, files) = fixtures();
    let out = d.path().join("o");
    let o = out.display().to_string();
    let c = code(&["--out", &o, "sim", &files[1], "--start", "s:0,0", "--runs", "3", "--horizon", "1000",
                   "--checkpoints", "linear:250"]);
    assert_eq!(c, 0);
    let mut rd = csv::Reader::from_path(out.join("trajectories.csv")).unwrap();
    assert_eq!(rd.headers().unwrap(), vec!["run_id", "step", "pattern", "frequency"]);
    let mut sums = std::collections::BTreeMap::new();
    for row in rd.records() {
        let row = row.unwrap();
        let key = (row[0].parse::<u64>().unwrap(), row[1].parse::<u64>().unwrap());
        *sums.entry(key).or_insert(0.0) += row[3].parse::<f64>().unwrap();
    }
    assert_eq!(sums.len(), 3 * 4);
    for ((_, step), s) in sums {
        assert!([250, 500, 750, 1000].contains(&step));
        assert!((s - 1.0f64).abs() < 1e-9);
    }
}

#[test]
fn timestamp_only_with_flag() {
    let (_d, files) = fixtures();
    assert!(run(&["chain", &files[1]]).timestamp.is_none());
    assert!(run(&["--timestamp", "chain", &files[1]]).timestamp.is_some());
}

#[test]
fn sink_family_demo_lists_five_pairs() {
    let r = run(&["demo", "remark"]);
    assert_eq!(r.status, "ok");
    let pairs = r.results["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 5);
    let total: f64 = pairs.iter().map(|p| p["P"].as_str().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-4);
}

#[test]
fn translated_net_matches_embedded_trend() {
    let (_d, files) = fixtures();
    let r = run(&["translate-spn", &files[4]]);
    let doc = serde_json::to_string(&r.results["model"]).unwrap();
    let m = pvass_core::model::parse_pvass(&doc).unwrap();
    let c = pvass_core::chain::build_underlying(&m);
    let t = pvass_core::chain::trend_report(&m, &c).unwrap();
    assert_eq!(t.len(), 1);
    assert_eq!(t[0].trend, vec![rat(-89, 162), rat(-89, 162)]);
}
