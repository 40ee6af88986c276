use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ivfrail::io::{read_dataset, ColumnMap};
use ivfrail::simulation::{generate_dataset, parse_scenarios, replication_rng};
use ivfrail::two_stage::{estimate, EstimatorKind};
use tempfile::TempDir;

fn ivfrail(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ivfrail")).args(args).output().expect("spawn ivfrail")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

const CONFOUNDED: &str = r#"
[[scenario]]
id = "confounded"
exp_beta_x = 2.0
exp_beta_u = 2.0
alpha_v = 1.0
n = 1500
replications = 1
"#;

fn generated(dir: &TempDir, scenarios: &str, replication: usize) -> PathBuf {
    let sc = write(dir, "scen.toml", scenarios);
    let out = dir.path().join(format!("data{replication}.csv"));
    let o = ivfrail(&[
        "generate",
        "--scenarios",
        path_str(&sc),
        "--replication",
        &replication.to_string(),
        "--seed",
        "3",
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

fn header(path: &Path) -> csv::StringRecord {
    csv::Reader::from_path(path).unwrap().headers().unwrap().clone()
}

fn field(rows: &[csv::StringRecord], head: &csv::StringRecord, method: &str, col: &str) -> f64 {
    let c = head.iter().position(|h| h == col).unwrap();
    let row = rows.iter().find(|r| &r[0] == method).unwrap();
    row[c].parse().unwrap()
}

fn analyze_all(dir: &TempDir, data: &Path) -> PathBuf {
    let out = dir.path().join("report.csv");
    let o = ivfrail(&[
        "analyze",
        "--input",
        path_str(data),
        "--instrument",
        "w",
        "--covariates",
        "z",
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn bad_event_value_names_the_column() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "bad.csv", "time,event,treatment\n1.0,1,0\n2.0,2,1\n3.0,0,1\n");
    let o = ivfrail(&["analyze", "--input", path_str(&data), "--estimators", "crude"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("column `event`"), "{err}");
}

#[test]
fn analyze_reports_every_estimator() {
    let dir = TempDir::new().unwrap();
    let data = generated(&dir, CONFOUNDED, 0);
    let report = analyze_all(&dir, &data);
    let rows = csv_rows(&report);
    let methods: Vec<String> = rows.iter().map(|r| r[0].to_string()).collect();
    let expected: Vec<String> = EstimatorKind::ALL.iter().map(|k| k.label()).collect();
    assert_eq!(methods, expected);
    let head = header(&report);
    let err = head.iter().position(|h| h == "error").unwrap();
    assert!(rows.iter().all(|r| r[err].is_empty()));
}

#[test]
fn planted_confounding_inflates_naive_hazard_ratio() {
    let dir = TempDir::new().unwrap();
    let data = generated(&dir, CONFOUNDED, 1);
    let report = analyze_all(&dir, &data);
    let (rows, head) = (csv_rows(&report), header(&report));
    let naive = field(&rows, &head, "naive", "hr");
    let corrected = field(&rows, &head, "2sri-frailty-gaussian", "hr");
    assert!(naive > corrected, "naive {naive} vs 2sri-f {corrected}");
    assert!(naive > 2.0);
}

#[test]
fn generated_file_reproduces_in_memory_estimates() {
    let dir = TempDir::new().unwrap();
    let data = generated(&dir, CONFOUNDED, 2);
    let report = analyze_all(&dir, &data);
    let (rows, head) = (csv_rows(&report), header(&report));

    let sc = &parse_scenarios(CONFOUNDED, 3).unwrap()[0];
    let sim = generate_dataset(&sc.config, &mut replication_rng(sc.config.seed, 2)).unwrap();
    let map = ColumnMap {
        covariates: vec!["z".into()],
        instruments: vec!["w".into()],
        ..ColumnMap::default()
    };
    let reread = read_dataset(fs::File::open(&data).unwrap(), &map).unwrap();
    assert_eq!(reread, sim.dataset);
    for kind in EstimatorKind::ALL {
        let mem = estimate(&sim.dataset, kind).unwrap();
        let file = field(&rows, &head, &kind.label(), "log_hr");
        assert!((mem.log_hr - file).abs() < 1e-12, "{kind}: {} vs {file}", mem.log_hr);
    }
}

const SWEEP: &str = r#"
[[scenario]]
id = "sweep"
exp_beta_x = [1.0, 2.0]
exp_beta_u = 2.0
n = 150
replications = 12
estimators = ["naive", "2sri", "2sri-frailty"]
"#;

fn simulate(dir: &TempDir, scenarios: &Path, seed: &str, threads: &str) -> Vec<u8> {
    let out = dir.path().join(format!("res-{seed}-{threads}.csv"));
    let o = ivfrail(&[
        "simulate",
        "--scenarios",
        path_str(scenarios),
        "--out",
        path_str(&out),
        "--seed",
        seed,
        "--threads",
        threads,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    fs::read(out).unwrap()
}

#[test]
fn simulate_is_byte_identical_across_threads_and_reruns() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "sweep.toml", SWEEP);
    let one = simulate(&dir, &sc, "9", "1");
    assert_eq!(one, simulate(&dir, &sc, "9", "4"));
    assert_eq!(one, simulate(&dir, &sc, "9", "8"));
    assert_eq!(one, simulate(&dir, &sc, "9", "1"));
    assert_ne!(one, simulate(&dir, &sc, "10", "1"));

    let text = String::from_utf8(one).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("scenario_id,estimator,median_bias,coverage,mean_ci_width,n_fail"));
    assert_eq!(lines.count(), 6);
}

#[test]
fn single_replication_gives_binary_coverage() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "one.toml", "[[scenario]]\nid = \"one\"\nn = 120\nreplications = 1\n");
    let out = simulate(&dir, &sc, "1", "1");
    let mut r = csv::Reader::from_reader(out.as_slice());
    for rec in r.records() {
        let c: f64 = rec.unwrap()[3].parse().unwrap();
        assert!(c == 0.0 || c == 1.0);
    }
}

#[test]
fn invalid_scenario_names_the_field() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "bad.toml", "[[scenario]]\nid = \"bad\"\ncensoring_target = 1.5\n");
    let out = dir.path().join("never.csv");
    let o = ivfrail(&["simulate", "--scenarios", path_str(&sc), "--out", path_str(&out)]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("field `censoring_target`"), "{err}");
}

fn km(dir: &TempDir, data: &Path, extra: &[&str]) -> (Output, Vec<csv::StringRecord>) {
    let out = dir.path().join("km.csv");
    let mut args = vec!["km", "--input", path_str(data), "--group", "g", "--out", path_str(&out)];
    args.extend_from_slice(extra);
    let o = ivfrail(&args);
    let rows = if o.status.success() { csv_rows(&out) } else { Vec::new() };
    (o, rows)
}

fn balanced_km_data() -> String {
    let mut s = String::from("time,event,g,x,w\n");
    let times = [3.0, 5.0, 5.0, 8.0, 9.5, 12.0, 14.0, 20.0];
    for g in 0..2 {
        for (k, t) in times.iter().enumerate() {
            let event = if k % 3 == 2 { 0 } else { 1 };
            let x = (k % 4) as f64;
            let w = k as f64 + 0.5 * g as f64;
            s.push_str(&format!("{t},{event},{g},{x},{w}\n"));
        }
    }
    s
}

#[test]
fn identical_groups_give_identical_curves() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "km.csv.in", &balanced_km_data());
    let (o, rows) = km(&dir, &data, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let g0: Vec<Vec<String>> = rows.iter().filter(|r| &r[0] == "0").map(|r| r.iter().skip(1).map(String::from).collect()).collect();
    let g1: Vec<Vec<String>> = rows.iter().filter(|r| &r[0] == "1").map(|r| r.iter().skip(1).map(String::from).collect()).collect();
    assert!(!g0.is_empty());
    assert_eq!(g0, g1);
}

#[test]
fn ipw_with_constant_propensity_matches_unweighted() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "km.csv.in", &balanced_km_data());
    let (_, plain) = km(&dir, &data, &[]);
    let (o, weighted) = km(&dir, &data, &["--ipw", "--covariates", "x"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(plain.len(), weighted.len());
    for (a, b) in plain.iter().zip(&weighted) {
        for col in 1..3 {
            let (x, y): (f64, f64) = (a[col].parse().unwrap(), b[col].parse().unwrap());
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn non_binary_group_is_rejected() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "bad.csv", "time,event,g\n1,1,0\n2,1,2\n3,0,1\n");
    let (o, _) = km(&dir, &data, &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("column `g`"));
}

#[test]
fn instrument_concordance_matches_pair_count() {
    let dir = TempDir::new().unwrap();
    let text = balanced_km_data();
    let data = write(&dir, "km.csv.in", &text);
    let (o, _) = km(&dir, &data, &["--instrument", "w"]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    let est: f64 = stdout.split_whitespace().nth(1).unwrap().parse().unwrap();

    let mut g0 = Vec::new();
    let mut g1 = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        if f[2] == 1.0 { g1.push(f[4]) } else { g0.push(f[4]) }
    }
    let mut s = 0.0;
    for a in &g1 {
        for b in &g0 {
            s += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
        }
    }
    let brute = s / (g1.len() * g0.len()) as f64;
    assert!((est - brute).abs() < 1e-12, "{est} vs {brute}");
}
