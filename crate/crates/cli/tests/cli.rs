use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nmbc_core::curves::{active_fl_knots, force_velocity_knots, passive_fl_knots};
use nmbc_core::{load_model, load_trace, Trace};

fn nmbc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmbc"))
        .args(args)
        .current_dir(cwd)
        .env("NMBC_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = nmbc(args, cwd);
    assert!(
        out.status.success(),
        "nmbc {} failed with {:?}: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    nmbc(args, cwd).status.code().expect("exit code")
}

fn metric(report: &str, name: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{name},")))
        .unwrap_or_else(|| panic!("no {name} in {report}"))
        .parse()
        .unwrap()
}

fn write_column(path: &Path, name: &str, seconds: f64, f: impl Fn(f64) -> f64) {
    let time: Vec<f64> = (0..=(seconds * 1000.0).round() as usize).map(|i| i as f64 * 1e-3).collect();
    let values = time.iter().map(|&t| f(t)).collect();
    let tr = Trace::new(vec![name.into()], time, vec![values]).unwrap();
    nmbc_core::write_trace(&tr, path).unwrap();
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let help = nmbc(&["--help"], dir.path());
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for cmd in ["init-model", "synth", "pretune", "calibrate", "run", "simulate-exo", "analyze", "dump-curves"] {
        assert!(text.contains(cmd), "help lacks {cmd}");
    }
    assert_eq!(code(&[], dir.path()), 1);
    assert_eq!(code(&["frobnicate"], dir.path()), 1);
    assert_eq!(code(&["init-model", "--preset", "nope", "--out", "m.json"], dir.path()), 1);
    assert_eq!(code(&["run", "--model", "m.json"], dir.path()), 1);
    assert_eq!(
        code(&["run", "--model", "m.json", "--emg", "e.csv", "--angles", "a.csv", "--out", "o.csv", "--support-ratio", "1.5"], dir.path()),
        1
    );
}

#[test]
fn init_model_writes_loadable_presets() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["init-model", "--preset", "bilateral14", "--out", "b14.json"], dir.path());
    ok(&["init-model", "--preset", "ankle2", "--out", "a2.json"], dir.path());
    let b14 = load_model(dir.path().join("b14.json")).unwrap();
    assert_eq!((b14.mtus.len(), b14.joints.len()), (14, 4));
    let a2 = load_model(dir.path().join("a2.json")).unwrap();
    assert_eq!((a2.mtus.len(), a2.joints.len()), (2, 1));
}

#[test]
fn shipped_models_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models");
    let b14 = load_model(root.join("bilateral14.json")).unwrap();
    assert_eq!((b14.mtus.len(), b14.joints.len()), (14, 4));
    let a2 = load_model(root.join("ankle2.json")).unwrap();
    assert_eq!(a2.joint_names(), vec!["ankle_r".to_string()]);
}

#[test]
fn dump_curves_reproduces_knots() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["dump-curves", "--out", "curves.csv", "--points", "11"], dir.path());
    let mut r = csv::Reader::from_path(dir.path().join("curves.csv")).unwrap();
    let rows: Vec<(String, f64, f64)> = r
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].to_string(), rec[1].parse().unwrap(), rec[2].parse().unwrap())
        })
        .collect();
    for (name, (xs, ys)) in [
        ("active_fl", active_fl_knots()),
        ("passive_fl", passive_fl_knots()),
        ("fv", force_velocity_knots()),
    ] {
        for (x, y) in xs.iter().zip(ys) {
            let row = rows.iter().find(|r| r.0 == name && r.1 == *x).expect("knot row");
            assert!((row.2 - y).abs() <= 1e-9, "{name}({x}) = {}", row.2);
        }
    }
    assert!(rows.iter().any(|r| r.0 == "tendon"));
    let stdout = ok(&["dump-curves", "--points", "2"], dir.path());
    assert!(stdout.starts_with("curve,x,y\n"));
}

#[test]
fn synth_calibrate_pretune_and_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["init-model", "--preset", "ankle2", "--out", "model.json"], d);
    ok(&["synth", "--model", "model.json", "--out", "data", "--duration", "2", "--trials", "2", "--perturb", "--seed", "4"], d);
    assert!(d.join("data/dataset.json").is_file());
    assert!(d.join("data/truth_model.json").is_file());
    let angles = load_trace::<&str>(d.join("data/trial_1/angles.csv"), &["ankle_r", "knee_r"]).unwrap();
    assert_eq!(angles.len(), 2001);

    let report = ok(
        &["calibrate", "--dataset", "data", "--model", "model.json", "--seed", "2", "--max-evals", "60", "--out", "cal.json", "--report", "params.csv"],
        d,
    );
    assert!(report.starts_with("metric,value\n"));
    assert!(metric(&report, "final_objective") <= metric(&report, "initial_objective"));
    assert!(metric(&report, "rmse_ankle_r").is_finite());
    assert_eq!(load_model(d.join("cal.json")).unwrap().mtus.len(), 2);
    let params = fs::read_to_string(d.join("params.csv")).unwrap();
    assert_eq!(params.lines().count(), 3);

    let pretune = ok(&["pretune", "--model", "model.json", "--out", "tuned.json"], d);
    assert!(pretune.starts_with("mtu,l_opt,l_slack"));
    assert_eq!(pretune.lines().count(), 3);

    ok(
        &["run", "--model", "cal.json", "--emg", "data/trial_0/emg.csv", "--angles", "data/trial_0/angles.csv", "--support-ratio", "0.5", "--out", "tau.csv"],
        d,
    );
    let tau = load_trace(d.join("tau.csv"), &["ankle_r_tau_bio", "ankle_r_tau_support"]).unwrap();
    assert_eq!(tau.len(), 2001);
    for (b, s) in tau.column_at(0).iter().zip(tau.column_at(1)) {
        assert_eq!(*s, (0.5 * b).clamp(-40.0, 40.0));
    }
}

#[test]
fn data_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["init-model", "--preset", "ankle2", "--out", "model.json"], d);
    ok(&["synth", "--model", "model.json", "--out", "data", "--duration", "1"], d);
    // EMG lacking the tibialis channel
    let emg = load_trace::<&str>(d.join("data/trial_0/emg.csv"), &[]).unwrap();
    let only = emg.select(&[emg.channels()[0].as_str()]).unwrap();
    nmbc_core::write_trace(&only, d.join("short.csv")).unwrap();
    let args = ["run", "--model", "model.json", "--emg", "short.csv", "--angles", "data/trial_0/angles.csv", "--out", "o.csv"];
    assert_eq!(code(&args, d), 2);
    assert_eq!(code(&["run", "--model", "missing.json", "--emg", "a", "--angles", "b", "--out", "c"], d), 2);
    fs::write(d.join("session.json"), r#"{"baseline": "x", "conditions": []}"#).unwrap();
    assert_eq!(code(&["analyze", "--session", "session.json", "--out", "r.csv"], d), 2);
    write_column(&d.join("ref.csv"), "tau", 0.5, |_| 0.0);
    assert_eq!(code(&["simulate-exo", "--ref", "ref.csv", "--motion", "ref.csv", "--out", "s.csv"], d), 2);
}

#[test]
fn simulate_exo_tracks_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_column(&d.join("ref.csv"), "tau", 3.0, |t| 20.0 * (2.0 * std::f64::consts::PI * t).sin());
    write_column(&d.join("motion.csv"), "ankle", 3.0, |t| 0.2 * (2.0 * std::f64::consts::PI * t).sin());
    let on = ok(&["simulate-exo", "--ref", "ref.csv", "--motion", "motion.csv", "--out", "sim.csv"], d);
    assert!(metric(&on, "rms_error") < 2.0);
    let sim = load_trace(d.join("sim.csv"), &["tau_ref", "tau_exo", "tau_dist", "angle"]).unwrap();
    assert_eq!(sim.len(), 3001);

    write_column(&d.join("zero.csv"), "tau", 3.0, |_| 0.0);
    let with = ok(&["simulate-exo", "--ref", "zero.csv", "--motion", "motion.csv", "--out", "a.csv"], d);
    let without = ok(&["simulate-exo", "--ref", "zero.csv", "--motion", "motion.csv", "--out", "b.csv", "--no-dob"], d);
    assert!(metric(&with, "rms_tau_exo") < metric(&without, "rms_tau_exo"));

    // A joint jerked faster than the motor can follow overloads the spring.
    write_column(&d.join("jerk.csv"), "ankle", 1.0, |t| if t > 0.5 { 2.0 } else { 0.0 });
    assert_eq!(code(&["simulate-exo", "--ref", "zero.csv", "--motion", "jerk.csv", "--out", "j.csv"], d), 3);
}

#[test]
fn analyze_reports_percent_change() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["init-model", "--preset", "ankle2", "--out", "model.json"], d);
    for (label, ratio) in [("na", "0"), ("as", "0.4")] {
        ok(&["synth", "--model", "model.json", "--out", label, "--duration", "6", "--support-ratio", ratio], d);
        ok(
            &["run", "--model", "model.json", "--emg", &format!("{label}/trial_0/emg.csv"), "--angles", &format!("{label}/trial_0/angles.csv"), "--out", &format!("{label}.csv")],
            d,
        );
    }
    let session = r#"{
        "baseline": "nonassisted",
        "conditions": [
            {"label": "nonassisted", "data": "../na.csv", "angles": "../na/trial_0/angles.csv"},
            {"label": "assisted", "data": "../as.csv", "angles": "../as/trial_0/angles.csv"}
        ]
    }"#;
    fs::create_dir(d.join("s")).unwrap();
    fs::write(d.join("s/session.json"), session).unwrap();
    ok(&["analyze", "--session", "s", "--out", "report.csv"], d);
    let text = fs::read_to_string(d.join("report.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("condition,channel,mean_rms,cycles_before,cycles_after,percent_change")
    );
    let row = lines
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f[0] == "assisted" && f[1] == "ankle_r_tau_bio")
        .expect("assisted row");
    assert!(row[3].parse::<usize>().unwrap() >= 4);
    assert!(row[5].parse::<f64>().unwrap() < 0.0);
}
