use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn liplab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liplab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn run_config(cmd: &str, name: &str) -> (Output, TempDir) {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join(name);
    let out = liplab(&[cmd, "--config", cfg.to_str().unwrap()], dir.path());
    (out, dir)
}

fn run_inline(cmd: &str, json: &str) -> (Output, TempDir) {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("config.in.json");
    std::fs::write(&cfg, json).unwrap();
    let out = liplab(&[cmd, "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    (out, dir)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Header plus rows of a CSV file written by the harness.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines().map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>());
    let header = lines.next().unwrap();
    (header, lines.collect())
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

const SMALL_CONE: &str = r#"{
    "space": { "dim": 2, "kind": "lp", "p": "inf" },
    "function": { "family": "norm_cone", "cap": 1.0 },
    "exhaustion": { "kind": "balls", "radii": [0.5, 1.0], "counts": [10, 10] },
    "max_index": 6
}"#;

#[test]
fn affine_approximation_passes() {
    let (out, dir) = run_config("approximate", "approximate_affine.json");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (header, rows) = read_csv(&dir.path().join("certificate.csv"));
    let pass = column(&header, "pass");
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[pass] == "true"));
}

#[test]
fn cone_scenario_error_is_dominated_by_bound() {
    let (out, dir) = run_config("approximate", "approximate_cone.json");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (header, rows) = read_csv(&dir.path().join("certificate.csv"));
    let (e, b, s) = (column(&header, "error"), column(&header, "error_bound"), column(&header, "error_slack"));
    assert_eq!(rows.len(), 3100);
    for r in &rows {
        let num = |i: usize| r[i].parse::<f64>().unwrap();
        assert!(num(e) <= num(b) + num(s), "{r:?}");
    }
}

#[test]
fn empty_index_range_is_a_config_error() {
    let (out, _dir) = run_inline("approximate", &SMALL_CONE.replace("\"max_index\": 6", "\"max_index\": 0"));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("empty index range"), "{}", stderr(&out));
}

#[test]
fn zero_epsilon_is_a_config_error() {
    let (out, _dir) = run_inline("verify", r#"{ "epsilon": 0 }"#);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("epsilon"), "{}", stderr(&out));
}

#[test]
fn negative_weight_is_a_config_error() {
    let json = r#"{ "measure": { "kind": "atoms", "points": [[0.0], [1.0]], "weights": [0.5, -0.5] } }"#;
    let (out, _dir) = run_inline("verify", json);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let json = r#"{ "space": { "dim": 2, "kind": "weighted_lp", "p": 2, "weights": [1.0, -1.0] } }"#;
    let (out, _dir) = run_inline("verify", json);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn malformed_configs_exit_2() {
    for json in [
        "{ not json",
        r#"{ "bogus": 1 }"#,
        r#"{ "function": { "family": "unknown" } }"#,
        r#"{ "p": [0.5] }"#,
    ] {
        let (out, _dir) = run_inline("verify", json);
        assert_eq!(out.status.code(), Some(2), "{json}: {}", stderr(&out));
    }
    // sections a command needs but the config lacks
    let (out, _dir) = run_inline("approximate", "{}");
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("space"));
    let step = r#"{
        "space": { "dim": 1, "kind": "lp", "p": 2 },
        "function": { "family": "indicator", "a": 0.5, "b": 1.0 },
        "exhaustion": { "kind": "points", "points": [[0.0], [1.0]] }
    }"#;
    let (out, _dir) = run_inline("approximate", step);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cone.json");
    std::fs::write(&cfg, SMALL_CONE).unwrap();
    let mut csvs = Vec::new();
    for threads in [None, Some("1"), None] {
        let out = dir.path().join(format!("run{}", csvs.len()));
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_liplab"));
        cmd.args(["approximate", "--quiet", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        if let Some(t) = threads {
            cmd.env("LIPLAB_THREADS", t);
        }
        let status = cmd.status().unwrap();
        assert_eq!(status.code(), Some(0));
        csvs.push((std::fs::read(out.join("certificate.csv")).unwrap(), std::fs::read(out.join("certificate.json")).unwrap()));
    }
    assert!(csvs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cone.json");
    std::fs::write(&cfg, SMALL_CONE).unwrap();
    let out = dir.path().join("out");
    let o = liplab(&["approximate", "--config", cfg.to_str().unwrap(), "--seed", "99"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let written: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(written["seed"], 99);
    let cert: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["seed"], 99);
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_liplab"))
        .args(["verify", "--quiet", "--out", dir.path().to_str().unwrap()])
        .env("LIPLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

fn operator_rank(dir: &Path) -> (u64, u64) {
    let op: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("operator.json")).unwrap()).unwrap();
    (op["rank"].as_u64().unwrap(), op["support"].as_u64().unwrap())
}

#[test]
fn mapop_identity_case_has_full_rank() {
    let (out, dir) = run_config("mapop", "mapop_identity.json");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (rank, support) = operator_rank(dir.path());
    assert_eq!(rank, support);
    assert_eq!(support, 5);
}

#[test]
fn mapop_single_cell_has_rank_one() {
    let (out, dir) = run_config("mapop", "mapop_single_cell.json");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(operator_rank(dir.path()).0, 1);
}

#[test]
fn mapop_stress_ratios_stay_below_three() {
    let (out, dir) = run_config("mapop", "mapop_stress.json");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (header, rows) = read_csv(&dir.path().join("stress.csv"));
    let w = column(&header, "worst_ratio");
    assert_eq!(rows.len(), 200);
    assert!(rows.iter().all(|r| r[w].parse::<f64>().unwrap() <= 3.0));
}

#[test]
fn mapop_point_far_from_net_is_rejected() {
    let json = r#"{ "epsilon": 0.1, "mapop": { "vectors": [[0.0, 1.0]], "points": [[0.5, 1.0]] } }"#;
    let (out, _dir) = run_inline("mapop", json);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

fn final_energy(path: &Path) -> f64 {
    let (header, rows) = read_csv(path);
    rows.last().unwrap()[column(&header, "energy")].parse().unwrap()
}

#[test]
fn sobolev_kink_energies_within_two_percent() {
    let (out, dir) = run_config("sobolev", "sobolev_kink.json");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for p in ["1", "2"] {
        let e = final_energy(&dir.path().join(format!("sobolev_p{p}.csv")));
        assert!((e - 1.0).abs() < 0.02, "p={p}: {e}");
    }
}

#[test]
fn sobolev_affine_passes_at_first_index() {
    let (out, dir) = run_config("sobolev", "sobolev_affine.json");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (_, rows) = read_csv(&dir.path().join("sobolev_p2.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "1");
}

#[test]
fn bv_indicator_mass_within_two_percent() {
    let (out, dir) = run_config("bv", "bv_indicator.json");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let e = final_energy(&dir.path().join("bv.csv"));
    assert!((e - 1.0).abs() < 0.02, "{e}");
}

#[test]
fn verify_with_defaults_passes() {
    let dir = TempDir::new().unwrap();
    let out = liplab(&["verify"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (header, rows) = read_csv(&dir.path().join("verify.csv"));
    let pass = column(&header, "pass");
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r[pass] == "true"));
}

#[test]
fn failing_certificate_exits_1() {
    // energy tolerance far below what 2 indices can reach
    let json = r#"{
        "space": { "dim": 1, "kind": "lp", "p": 2 },
        "function": { "family": "kink", "center": [0.5] },
        "measure": { "kind": "grid", "lo": [0.0], "hi": [1.0], "counts": [200] },
        "p": [1.0],
        "max_index": 2,
        "density": { "window": 1, "energy_tolerance": 1e-9 }
    }"#;
    let (out, _dir) = run_inline("sobolev", json);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("n=2"), "{}", stderr(&out));
}
