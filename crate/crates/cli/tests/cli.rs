use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pvariv"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

struct XorShift(u64);

impl XorShift {
    fn uniform(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    fn normal(&mut self) -> f64 {
        let (u, v) = (self.uniform().max(1e-300), self.uniform());
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }
}

/// Spending and output levels for `units` regions; regional spending
/// co-moves with a common national component.
fn write_levels(dir: &Path, units: usize, periods: usize) -> PathBuf {
    let mut r = XorShift(0x9e3779b97f4a7c15);
    let common: Vec<f64> = (0..periods).map(|_| 0.04 * r.normal()).collect();
    let mut text = String::from("unit,time,exp,gdp\n");
    for u in 0..units {
        let (mut e, mut g) = (10.0 + u as f64, 100.0 + 5.0 * u as f64);
        for (t, c) in common.iter().enumerate() {
            let eg = 0.02 + c + 0.02 * r.normal();
            e *= 1.0 + eg;
            g *= 1.0 + 0.02 + 0.15 * (eg - 0.02) + 0.01 * r.normal();
            text.push_str(&format!("r{u},{},{e:.8},{g:.8}\n", 1980 + t));
        }
    }
    let path = dir.join("levels.csv");
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let out = run(&["estimate", "--input", s(&dir.path().join("nope.csv")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn too_few_periods_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let input = write_levels(dir.path(), 5, 4);
    let out = run(&["estimate", "--input", s(&input), "--lags", "4", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_flag_values_are_rejected() {
    let dir = TempDir::new().unwrap();
    let input = write_levels(dir.path(), 5, 20);
    for args in [
        vec!["estimate", "--input", s(&input), "--lags", "zero"],
        vec!["estimate", "--input", s(&input), "--alpha", "1.5"],
        vec!["estimate", "--input", s(&input), "--variance", "hac"],
    ] {
        assert_eq!(run(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn unknown_config_key_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "alpah = 0.1\n").unwrap();
    let out = run(&["mc", "--config", s(&cfg), "--reps", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn constant_instrument_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("unit,time,w,y,z\n");
    let mut r = XorShift(7);
    for u in 0..6 {
        for t in 0..30 {
            text.push_str(&format!("{u},{t},{},{},1.0\n", r.normal(), r.normal()));
        }
    }
    let input = dir.path().join("flat.csv");
    fs::write(&input, text).unwrap();
    let out = run(&[
        "estimate", "--input", s(&input), "--transform", "none", "--vars", "w,y", "--instrument", "z",
        "--lags", "1", "--out", s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn impact_response_is_shock_times_beta() {
    let dir = TempDir::new().unwrap();
    let input = write_levels(dir.path(), 12, 40);
    let out = run(&["estimate", "--input", s(&input), "--lags", "1", "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let iv: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("iv.json")).unwrap()).unwrap();
    let beta = iv["beta"][0].as_f64().unwrap();

    let out = run(&["irf", "--input", s(&input), "--lags", "1", "--horizon", "4", "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("irf.csv")).unwrap();
    let mut checked = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        if &rec[0] == "0" && &rec[2] == "irf" {
            let resp: f64 = rec[4].parse().unwrap();
            let want = if &rec[1] == "exp_growth" { 0.01 } else { 0.01 * beta };
            assert!((resp - want).abs() < 1e-12, "{} {resp} vs {want}", &rec[1]);
            checked += 1;
        }
    }
    assert_eq!(checked, 2);
    for f in ["model.json", "phi.csv", "iv.csv", "diagnostics.json", "bands.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(!fs::read_dir(dir.path()).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn lagselect_writes_table() {
    let dir = TempDir::new().unwrap();
    let input = write_levels(dir.path(), 12, 40);
    let out = run(&["lagselect", "--input", s(&input), "--p-max", "3", "--out", s(dir.path())]);
    assert!(out.status.success());
    let table = fs::read_to_string(dir.path().join("lagselect.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.starts_with("p,mbic,maic,mqic"));
}

#[test]
fn monte_carlo_is_reproducible_across_thread_counts() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = |d: &TempDir| {
        vec!["mc".to_string(), "--reps".into(), "25".into(), "--horizon".into(), "3".into(), "--seed".into(), "99".into(), "--out".into(), s(d.path()).into()]
    };
    let one = bin().args(args(&a)).env("PVARIV_THREADS", "1").output().unwrap();
    let many = bin().args(args(&b)).env("PVARIV_THREADS", "4").output().unwrap();
    assert!(one.status.success() && many.status.success());
    let ca = fs::read_to_string(a.path().join("mc.csv")).unwrap();
    let cb = fs::read_to_string(b.path().join("mc.csv")).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(ca.lines().count(), 5);
}

#[test]
fn monte_carlo_single_replication_from_config() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("mc.toml");
    fs::write(
        &cfg,
        format!(
            "out = {:?}\n[mc]\nreps = 1\nhorizon = 2\nN = 5\nT = 30\ntarget_concentration = 20.0\nphi = [[[0.5, 0.0], [0.2, 0.3]]]\n",
            s(dir.path())
        ),
    )
    .unwrap();
    let out = run(&["mc", "--config", s(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("mc_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["reps"].as_u64(), Some(1));
}
