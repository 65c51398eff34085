//! End-to-end runs of the binary: outputs, exit codes and output-directory precedence.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_anosov-forge"));
    c.env_remove("ANOSOV_FORGE_OUT");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in\n{text}"))
        .parse()
        .unwrap()
}

/// Data rows of a CSV written by the tool (comment lines start with '#').
fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            l.trim_end_matches('\r')
                .split(',')
                .map(str::to_string)
                .collect()
        })
        .collect()
}

#[test]
fn glue_reports_kappa_and_r() {
    let o = run(bin().args(["glue", "--ell", "1", "--tau", "1", "--a", "1", "--b", "0"]));
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!((value(&text, "kappa") - 0.20901164656533677).abs() < 1e-12);
    assert!((value(&text, "r") - 0.2949633752674652).abs() < 1e-12);

    let o = run(bin().args(["glue", "--ell", "1", "--tau", "1", "--a", "1", "--b", "1"]));
    assert_eq!(o.status.code(), Some(0));
    assert!((value(&stdout(&o), "kappa") - 0.79098835343466323).abs() < 1e-12);
}

#[test]
fn glue_usage_and_domain_errors_exit_2() {
    let o = run(bin().args(["glue", "--tau", "1", "--a", "1", "--b", "0"]));
    assert_eq!(o.status.code(), Some(2));
    let o = run(bin().args(["glue", "--ell", "-1", "--tau", "1", "--a", "1", "--b", "0"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_config_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "schema_version = 1\n[scan]\nsamples = \"many\"\n").unwrap();
    let o = run(bin().arg("verify").arg(&cfg).arg("--out").arg(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");

    std::fs::write(&cfg, "schema_version = 7\n").unwrap();
    let o = run(bin().arg("build").arg(&cfg));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sphere_cap_without_extension_fails_with_conjugate_points() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin()
        .arg("verify")
        .arg(configs().join("sphere-cap-control.toml"))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL conjugate-points"));
    let table = std::fs::read_to_string(dir.path().join("conjugate_points.csv")).unwrap();
    let rows = data_rows(&table);
    assert!(!rows.is_empty());
    let report = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(json["report"]["pass"], serde_json::Value::Bool(false));
}

#[test]
fn meridian_flow_moves_at_unit_speed_in_t() {
    let o = run(bin().args([
        "flow",
        "--instance",
        "cosh-cylinder",
        "--c",
        "0",
        "--t0",
        "-0.5",
        "--horizon",
        "3",
    ]));
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("# anosov-forge flow"));
    assert!(text.contains("# config_sha256="));
    let rows = data_rows(&text);
    assert!(rows.len() >= 30);
    for r in rows {
        let s: f64 = r[0].parse().unwrap();
        let t: f64 = r[1].parse().unwrap();
        let theta: f64 = r[3].parse().unwrap();
        assert!((t - (-0.5 + s)).abs() < 1e-10, "s = {s}, t = {t}");
        assert_eq!(theta, 0.0);
    }
}

#[test]
fn lens_fan_has_one_row_per_angle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lens.csv");
    let o = run(bin()
        .args([
            "lens",
            "--instance",
            "cosh-cylinder",
            "--angles",
            "64",
            "--output",
        ])
        .arg(&out));
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("\r\n"));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 64);
    assert!(rows.iter().all(|r| r.len() == 9));
    // a near-meridian entry from the upper side leaves through the lower side
    assert_eq!(rows[32][5], "lower");
}

#[test]
fn funnel_band_curvature_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("funnel.csv");
    let o = run(bin()
        .args(["curvature", "--band", "funnel", "--output"])
        .arg(&out));
    assert_eq!(o.status.code(), Some(0));
    assert!(!data_rows(&std::fs::read_to_string(&out).unwrap()).is_empty());
}

#[test]
fn output_directory_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("from-env");
    let flag_dir = dir.path().join("from-flag");
    let cfg = configs().join("cylinder.toml");

    let o = run(bin()
        .arg("build")
        .arg(&cfg)
        .env("ANOSOV_FORGE_OUT", &env_dir));
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(env_dir.join("build.json").exists());

    let o = run(bin()
        .arg("build")
        .arg(&cfg)
        .arg("--out")
        .arg(&flag_dir)
        .env("ANOSOV_FORGE_OUT", dir.path().join("unused")));
    assert_eq!(o.status.code(), Some(0));
    assert!(flag_dir.join("build.json").exists());
    assert!(!dir.path().join("unused").exists());

    // identical configuration, different directory: identical tables
    let a = std::fs::read(env_dir.join("params.csv")).unwrap();
    let b = std::fs::read(flag_dir.join("params.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn report_summarizes_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin()
        .arg("verify")
        .arg(configs().join("sphere-cap-control.toml"))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    let o = run(bin().arg("report").arg(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("sphere-cap-control"));
    let o = run(bin().arg("report").arg(dir.path().join("missing")));
    assert_eq!(o.status.code(), Some(2));
}
