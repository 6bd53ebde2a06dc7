use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const STATIONS: usize = 30;
const STEPS: usize = 5;

fn field(x: f64, y: f64, t: f64) -> f64 {
    (3.0 * x).sin() * (2.0 * y).cos() + t * t
}

/// Stations on a sunflower spiral inside a 16-gon of radius 1.
fn write_inputs(dir: &Path) {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut stations = String::from("id,x,y\n");
    let mut readings = String::from("station_id,step_index,value\n");
    for i in 0..STATIONS {
        let r = 0.8 * ((i as f64 + 0.5) / STATIONS as f64).sqrt();
        let a = i as f64 * golden;
        let (x, y) = (r * a.cos(), r * a.sin());
        writeln!(stations, "st{i},{x},{y}").unwrap();
        for k in 0..STEPS {
            let t = k as f64 / (STEPS - 1) as f64;
            writeln!(readings, "st{i},{k},{}", field(x, y, t)).unwrap();
        }
    }
    let mut border = String::from("x,y\n");
    for i in 0..16 {
        let a = i as f64 * std::f64::consts::TAU / 16.0;
        writeln!(border, "{},{}", a.cos(), a.sin()).unwrap();
    }
    fs::write(dir.join("stations.csv"), stations).unwrap();
    fs::write(dir.join("readings.csv"), readings).unwrap();
    fs::write(dir.join("border.csv"), border).unwrap();
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.conf");
    let body = format!("stations = stations.csv\nreadings = readings.csv\nborder = border.csv\noutput_dir = out\n{extra}");
    fs::write(&path, body).unwrap();
    path
}

fn kpi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpi"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn fitted() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let cfg = write_config(dir.path(), "");
    let out = kpi(&["fit", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (dir, cfg)
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn fit_writes_outputs_and_report_reproduces() {
    let (dir, cfg) = fitted();
    let out_dir = dir.path().join("out");
    for f in ["volume.json", "grid.json", "report.json"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["stations"], STATIONS);
    assert_eq!(report["time_steps"], STEPS);
    assert!(report["max_residual"].as_f64().unwrap() <= 1e-9);

    let out = kpi(&["report", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let check: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir.join("report_check.json")).unwrap()).unwrap();
    assert_eq!(check["matches_report"], true);
}

#[test]
fn sample_writes_one_grid_per_time() {
    let (dir, cfg) = fitted();
    let cfg = cfg.to_str().unwrap();
    let out = kpi(&["sample", "--config", cfg, "--t", "0.1", "--t", "0.5", "--t", "0.9", "--res-u", "7", "--res-v", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..3 {
        let rows = csv_rows(&dir.path().join(format!("out/surface_{i}.csv")));
        assert_eq!(rows[0], ["u", "v", "value"]);
        assert_eq!(rows.len(), 1 + 7 * 5);
    }
    assert!(!dir.path().join("out/surface_3.csv").exists());
}

#[test]
fn iso_curve_at_a_station() {
    let (dir, cfg) = fitted();
    let out = kpi(&["iso", "--config", cfg.to_str().unwrap(), "--station", "st4", "--t", "0.25", "--res", "50"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let curve = csv_rows(&dir.path().join("out/iso_curve.csv"));
    assert_eq!(curve[0], ["v", "value"]);
    assert_eq!(curve.len(), 51);
    let markers = csv_rows(&dir.path().join("out/iso_markers.csv"));
    assert_eq!(markers[0], ["v", "value", "key"]);
    // the station's own reading is among the key markers on its row
    let x_y = {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let r = 0.8 * (4.5 / STATIONS as f64).sqrt();
        (r * (4.0 * golden).cos(), r * (4.0 * golden).sin())
    };
    let expected = field(x_y.0, x_y.1, 0.25);
    assert!(markers[1..].iter().any(|m| m[2] == "1" && (m[1].parse::<f64>().unwrap() - expected).abs() < 1e-9));

    let out = kpi(&["iso", "--config", cfg.to_str().unwrap(), "--station", "nowhere", "--t", "0.25"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn validate_accepts_good_inputs() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let cfg = write_config(dir.path(), "");
    let out = kpi(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn validation_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());

    let cfg = write_config(dir.path(), "degree_u = 0\n");
    let out = kpi(&["fit", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("out").exists());

    let cfg = write_config(dir.path(), "colour = blue\n");
    assert_eq!(code(&kpi(&["validate", "--config", cfg.to_str().unwrap()])), 2);

    let cfg = write_config(dir.path(), "");
    let mut readings = fs::read_to_string(dir.path().join("readings.csv")).unwrap();
    readings.push_str("ghost,0,1.0\n");
    fs::write(dir.path().join("readings.csv"), readings).unwrap();
    let out = kpi(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("ghost"));

    let missing = dir.path().join("absent.conf");
    assert_eq!(code(&kpi(&["validate", "--config", missing.to_str().unwrap()])), 2);
}

#[test]
fn out_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let cfg = write_config(dir.path(), "execution = sequential\n");
    let elsewhere = dir.path().join("elsewhere");
    let out = kpi(&["fit", "--config", cfg.to_str().unwrap(), "--out", elsewhere.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(elsewhere.join("volume.json").is_file());
    assert!(!dir.path().join("out").exists());
}
