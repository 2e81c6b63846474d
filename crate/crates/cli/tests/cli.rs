use std::path::{Path, PathBuf};
use std::process::Command as Proc;

use dmlab_cli::commands::{cmd_ber, cmd_pattern, cmd_solve, cmd_train_pruner, cmd_verify};
use dmlab_cli::scenario::Scenario;

fn scenario(json: &str) -> Scenario {
    Scenario::from_json(json).unwrap()
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn dmlab(args: &[&str]) -> std::process::Output {
    Proc::new(env!("CARGO_BIN_EXE_dmlab")).args(args).output().unwrap()
}

fn read_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

const STATIC_9: &str = r#"{"schedule": [[0,1,0,1,0,1,0,1,0],[0,1,0,1,0,1,0,1,0]],
    "pattern": {"nu_min": -2, "nu_max": 2, "theta": [0, 180, 1]}}"#;

#[test]
fn static_schedule_only_fundamental_radiates() {
    let files = cmd_pattern(scenario(STATIC_9)).unwrap();
    for nu in ["m2", "m1", "p1", "p2"] {
        let (header, rows) = read_csv(files.get(&format!("pattern_nu_{nu}.csv")).unwrap());
        assert_eq!(header, ["theta_deg", "magnitude", "magnitude_db"]);
        // Zero up to the rounding of the roots-of-unity sum.
        assert!(rows.iter().all(|r| r[1].parse::<f64>().unwrap() <= 1e-12), "nu {nu}");
    }
    let (_, rows) = read_csv(files.get("pattern_nu_p0.csv").unwrap());
    assert_eq!(rows.len(), 181);
    assert!(rows.iter().any(|r| r[1].parse::<f64>().unwrap() > 1.0));
}

#[test]
fn shipped_beam88_pattern_suppresses_harmonics_at_target() {
    let sc = Scenario::load(&shipped("beam88.json")).unwrap();
    let files = cmd_pattern(sc).unwrap();
    let at = |nu: &str| -> f64 {
        let (_, rows) = read_csv(files.get(&format!("pattern_nu_{nu}.csv")).unwrap());
        let r = rows.iter().find(|r| (r[0].parse::<f64>().unwrap() - 88.0).abs() < 1e-9).unwrap();
        r[1].parse().unwrap()
    };
    let w0 = at("p0");
    for nu in ["m3", "m2", "m1", "p1", "p2", "p3"] {
        let db = 20.0 * (at(nu) / w0).log10();
        assert!(db <= -10.0, "nu {nu}: {db} dB");
    }
}

#[test]
fn pattern_rerun_from_manifest_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let fig = shipped("beam88.json");
    let out = dmlab(&["pattern", "--scenario", fig.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = a.join("manifest.json");
    let out = dmlab(&["pattern", "--scenario", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(dir_files(&a), dir_files(&b));
}

#[test]
fn missing_csi_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = tmp.path().join("s.json");
    std::fs::write(&sc, r#"{"problem": {"kind": "channel-perfect"}}"#).unwrap();
    let out_dir = tmp.path().join("out");
    let out = dmlab(&["solve", "--scenario", sc.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("CSI"));
    assert!(!out_dir.exists());
}

#[test]
fn zero_frames_rejected() {
    let mut sc = scenario(STATIC_9);
    sc.ofdm.n_frames = 0;
    assert!(cmd_ber(sc).is_err());
}

#[test]
fn unreadable_schedule_file_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let sc = tmp.path().join("s.json");
    std::fs::write(&sc, r#"{"schedule_file": "/nonexistent/schedule.txt"}"#).unwrap();
    let out = dmlab(&["pattern", "--scenario", sc.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!out_dir.exists());
}

#[test]
fn inconsistent_dimensions_rejected() {
    assert!(cmd_pattern(scenario(r#"{"schedule": [[0,1,0],[1,1,1]]}"#)).is_err());
    assert!(cmd_pattern(scenario(r#"{"problem": {"steps": 1}}"#)).is_err());
    let two_d = r#"{"array": {"n_branches": 2}, "problem": {"kind": "freespace-1d"}}"#;
    assert!(cmd_pattern(scenario(two_d)).is_err());
}

const TINY_CHANNEL: &str = r#"{"seed": 5, "array": {"n_cells": 4},
    "problem": {"kind": "channel-perfect", "steps": 2,
        "bob": {"kind": "rayleigh-iid"}, "eve": {"kind": "rayleigh-iid"}},
    "ofdm": {"n_frames": 10},
    "ber": {"snr_grid": [0, 10]}}"#;

#[test]
fn exhaustive_flag_records_oracle_agreement() {
    let mut sc = scenario(TINY_CHANNEL);
    sc.solver.exhaustive = true;
    let files = cmd_solve(sc).unwrap();
    let rep: serde_json::Value = serde_json::from_str(files.get("solve_report.json").unwrap()).unwrap();
    assert_eq!(rep["oracle"]["agrees"], serde_json::Value::Bool(true), "{rep}");
    let sched = files.get("schedule.txt").unwrap();
    assert!(sched.starts_with("# steps=2 branches=1 cells=4\n"));
    assert_eq!(sched.lines().count(), 3);
}

#[test]
fn solve_output_feeds_pattern() {
    let tmp = tempfile::tempdir().unwrap();
    let files = cmd_solve(scenario(TINY_CHANNEL)).unwrap();
    files.write_to(tmp.path()).unwrap();
    let mut sc = scenario(TINY_CHANNEL);
    sc.schedule_file = Some(tmp.path().join("schedule.txt").to_string_lossy().into_owned());
    let pat = cmd_pattern(sc).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(pat.get("manifest.json").unwrap()).unwrap();
    assert!(manifest["scenario"]["schedule_file"].is_null());
    assert_eq!(manifest["scenario"]["schedule"].as_array().unwrap().len(), 2);
}

#[test]
fn snr_sweep_has_bob_and_eve_curves() {
    let files = cmd_ber(scenario(TINY_CHANNEL)).unwrap();
    let (header, rows) = read_csv(files.get("ber_snr.csv").unwrap());
    assert_eq!(header, ["series", "eb_n0_db", "ber", "bits_tested", "bit_errors", "secrecy_capacity"]);
    let series: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(series, ["bob", "eve", "bob", "eve"]);
}

#[test]
fn angle_sweep_with_and_without_dm() {
    let sc = Scenario::load(&shipped("beam88.json")).unwrap();
    let mut sc = sc;
    sc.ofdm.n_frames = 5;
    sc.ber.theta = [80.0, 96.0, 4.0];
    let files = cmd_ber(sc).unwrap();
    let (_, dm) = read_csv(files.get("ber_angle_dm.csv").unwrap());
    let (_, st) = read_csv(files.get("ber_angle_static.csv").unwrap());
    assert_eq!(dm.len(), 5);
    assert_eq!(st.len(), 5);
    assert!(dm.iter().all(|r| r[0] == "dm") && st.iter().all(|r| r[0] == "static"));
    // Paired seeds: identical bits tested at each angle.
    assert!(dm.iter().zip(&st).all(|(a, b)| a[1] == b[1] && a[3] == b[3]));
}

#[test]
fn seed_override_changes_channel_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = tmp.path().join("s.json");
    std::fs::write(&sc, TINY_CHANNEL).unwrap();
    let run = |seed: &str, dir: &str| {
        let d = tmp.path().join(dir);
        let out = dmlab(&["ber", "--scenario", sc.to_str().unwrap(), "--out", d.to_str().unwrap(), "--seed", seed]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(d.join("ber_snr.csv")).unwrap()
    };
    assert_eq!(run("9", "a"), run("9", "b"));
    assert_ne!(run("9", "a"), run("10", "c"));
}

const TINY_TRAIN: &str = r#"{"seed": 3, "array": {"n_cells": 5},
    "problem": {"kind": "channel-perfect", "steps": 2,
        "bob": {"kind": "rayleigh-iid"}, "eve": {"kind": "rayleigh-iid"}},
    "solver": {"relax": {"starts": 4, "max_iters": 100}},
    "ofdm": {"n_frames": 20},
    "train": {"train_instances": 2, "holdout_instances": 1, "round_size": 1,
        "params": {"hidden": [16, 16], "epochs_per_round": 5, "accuracy_floor": 0.0}}}"#;

#[test]
fn train_pruner_smoke_and_retrain_identical() {
    let a = cmd_train_pruner(scenario(TINY_TRAIN)).unwrap();
    let b = cmd_train_pruner(scenario(TINY_TRAIN)).unwrap();
    let model = a.get("model.txt").unwrap();
    assert!(model.starts_with("dmlab-pruning-net v1"));
    assert_eq!(model, b.get("model.txt").unwrap());
    let (header, rows) = read_csv(a.get("train_eval.csv").unwrap());
    assert_eq!(header[0], "instance");
    assert_eq!(header[1], "baseline_nodes");
    assert_eq!(rows.len(), 1);

    // The trained model loads as a solver policy.
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("model.txt");
    std::fs::write(&path, model).unwrap();
    let mut sc = scenario(TINY_TRAIN);
    sc.solver.policy = dmlab_cli::scenario::PolicySpec::Learned(path.to_string_lossy().into_owned());
    let rep: serde_json::Value =
        serde_json::from_str(cmd_solve(sc).unwrap().get("solve_report.json").unwrap()).unwrap();
    assert!(rep["policy"].as_str().unwrap().starts_with("learned"));
}

#[test]
fn train_pruner_needs_channel_models() {
    let sc = scenario(
        r#"{"array": {"n_cells": 2}, "problem": {"kind": "channel-perfect",
            "bob": {"gains": [[1,0],[0,1]]}, "eve": {"kind": "rayleigh-iid"}}}"#,
    );
    assert!(cmd_train_pruner(sc).is_err());
}

#[test]
fn verify_reports_channel_checks() {
    let files = cmd_verify(scenario(TINY_CHANNEL)).unwrap();
    let v: serde_json::Value = serde_json::from_str(files.get("verify.json").unwrap()).unwrap();
    assert_eq!(v["report"]["undesired_points"], 1);
    assert!(v["report"]["peak_deviation_deg"].as_array().unwrap().is_empty());
}

/// Two desired angles reached by changing only the codes.
#[test]
fn different_targets_give_different_schedules() {
    let mut out = Vec::new();
    for name in ["beam60.json", "beam120.json"] {
        let sc = Scenario::load(&shipped(name)).unwrap();
        let v = cmd_verify(sc).unwrap();
        let m: serde_json::Value = serde_json::from_str(v.get("manifest.json").unwrap()).unwrap();
        let r: serde_json::Value = serde_json::from_str(v.get("verify.json").unwrap()).unwrap();
        assert_eq!(r["target_suppressed_10db"], true, "{name}: {r}");
        for d in r["report"]["peak_deviation_deg"].as_array().unwrap() {
            assert!(d.as_f64().unwrap() <= 10.0, "{name}: {r}");
        }
        out.push(m["scenario"]["schedule"].clone());
    }
    assert_ne!(out[0], out[1]);
}
