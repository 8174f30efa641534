use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 5

[device.mechanical]
f_m = 2.3725e9
q_m = 28584.0

[device.optical]
f_c = 193.4e12
kappa = 5.0e9
g0 = 1.3e6
n_cav = 230.0

[bath]
gamma_total = 1.05e6
n_eq = 95.0
rates = "angular"
n_offset = 0.6
temperatures = [0.02, 0.5, 1.5, 3.0, 6.5]

[pulse]
f_if = 30e6
sample_rate = 125e6
t_pulse = 5e-6
n_reps = 64

[truth]
alpha_v = 1e-5
sigma_imp = 0.01
n_floor = 0.5

[filter]
bandwidth = 6.25e6
settling_time = 0.25e-6
"#;

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    (dir, cfg)
}

fn run(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pulsetherm"))
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_writes_one_file_per_temperature() {
    let (dir, cfg) = setup();
    let out = dir.path().join("o");
    ok(&run(&cfg, &out, &["simulate"]));
    let traces: Vec<String> = listing(&out.join("traces"))
        .into_iter()
        .filter(|n| n.ends_with(".ptt"))
        .collect();
    assert_eq!(traces.len(), 6, "{traces:?}");
    assert_eq!(traces.iter().filter(|n| n.starts_with('T')).count(), 5);
    for t in &traces {
        assert!(out.join("traces").join(t).with_extension("toml").exists());
    }
}

#[test]
fn stepwise_matches_pipeline() {
    let (dir, cfg) = setup();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&run(&cfg, &a, &["simulate"]));
    ok(&run(&cfg, &a, &["analyze"]));
    ok(&run(&cfg, &a, &["calibrate"]));
    ok(&run(&cfg, &a, &["metrics"]));
    ok(&run(&cfg, &b, &["pipeline"]));
    for f in [
        "heating_fits.csv",
        "noise_budget.toml",
        "occupancy_fit.toml",
        "occupancy.csv",
        "figures_of_merit.toml",
        "offres_area.toml",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(b.join("heating_fits.csv")).unwrap();
    assert!(csv.contains("# config_hash="));
    assert!(csv.contains("temperature [K]"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 6);
    assert!(b.join("report.toml").exists());
}

#[test]
fn output_independent_of_thread_count() {
    let (dir, cfg) = setup();
    let mut reports = Vec::new();
    for threads in ["1", "2", "0"] {
        let out = dir.path().join(format!("t{threads}"));
        ok(&run(&cfg, &out, &["--threads", threads, "pipeline"]));
        reports.push(fs::read(out.join("report.toml")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
}

#[test]
fn seed_flag_changes_output() {
    let (dir, cfg) = setup();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&run(&cfg, &a, &["pipeline"]));
    ok(&run(&cfg, &b, &["--seed", "6", "pipeline"]));
    let ra = fs::read_to_string(a.join("heating_fits.csv")).unwrap();
    let rb = fs::read_to_string(b.join("heating_fits.csv")).unwrap();
    assert!(rb.contains("# seed=6"));
    assert_ne!(ra, rb);
}

#[test]
fn corrupted_header_names_field() {
    let (dir, cfg) = setup();
    let out = dir.path().join("o");
    ok(&run(&cfg, &out, &["simulate"]));
    let f = out.join("traces").join("T00_0.020K.ptt");
    let mut bytes = fs::read(&f).unwrap();
    bytes[8] = 9;
    fs::write(&f, bytes).unwrap();
    let o = run(&cfg, &out, &["analyze", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("version"), "{err}");
}

#[test]
fn empty_input_is_usage_error() {
    let (dir, cfg) = setup();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = run(&cfg, &dir.path().join("o"), &["analyze", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_dependency() {
    let (dir, cfg) = setup();
    let out = dir.path().join("o");
    let o = run(&cfg, &out, &["metrics"]);
    assert_eq!(o.status.code(), Some(6));
    let o = run(&cfg, &out, &["calibrate"]);
    assert_eq!(o.status.code(), Some(6));

    ok(&run(&cfg, &out, &["simulate"]));
    fs::remove_file(out.join("traces").join("T01_0.500K.toml")).unwrap();
    let o = run(&cfg, &out, &["analyze"]);
    assert_eq!(o.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sidecar"));
}

#[test]
fn calibration_needs_hot_points() {
    let (dir, cfg) = setup();
    let text = CONFIG.replace("[0.02, 0.5, 1.5, 3.0, 6.5]", "[0.02, 0.1, 0.5, 1.0]");
    fs::write(&cfg, text).unwrap();
    let o = run(&cfg, &dir.path().join("o"), &["pipeline"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn preflight_refuses_oversized_run() {
    let (dir, cfg) = setup();
    let text = format!("{CONFIG}\n[limits]\nmax_trace_bytes = 500000\n");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("o");
    let o = run(&cfg, &out, &["simulate"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.join("traces").exists());
}

#[test]
fn unknown_config_key_rejected() {
    let (dir, cfg) = setup();
    fs::write(&cfg, CONFIG.replace("n_floor = 0.5", "n_floor = 0.5\nbogus = 1")).unwrap();
    let o = run(&cfg, &dir.path().join("o"), &["simulate"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn scan_fit_recovers_linewidth() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("scan.csv");
    let (l0, w) = (1550.0_f64, 0.04_f64);
    let mut text = String::from("wavelength [nm], transmission [1]\n");
    for i in 0..801 {
        let x = l0 - 0.4 + 0.001 * i as f64;
        let y = 1.0 - 0.6 / (1.0 + (2.0 * (x - l0) / w).powi(2));
        text.push_str(&format!("{x}, {y}\n"));
    }
    fs::write(&csv, text).unwrap();
    let out = dir.path().join("o");
    let o = Command::new(env!("CARGO_BIN_EXE_pulsetherm"))
        .arg("--out")
        .arg(&out)
        .args(["scan-fit", csv.to_str().unwrap()])
        .output()
        .unwrap();
    ok(&o);
    let report = fs::read_to_string(out.join("scan_fit.toml")).unwrap();
    let v: toml::Value = toml::from_str(&report).unwrap();
    let kappa = v["kappa_hz"].as_float().unwrap();
    let expect = 299_792_458.0 * (w * 1e-9) / (l0 * 1e-9).powi(2);
    assert!((kappa / expect - 1.0).abs() < 1e-4, "{kappa} vs {expect}");
}
