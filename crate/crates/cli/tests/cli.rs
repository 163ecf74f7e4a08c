use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn rrde(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrde")).current_dir(dir).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, v: Value) -> String {
    std::fs::write(dir.join(name), v.to_string()).unwrap();
    name.to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(p).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn construct_thm1(dir: &Path, out: &str, depth: usize) {
    let cfg = write_config(dir, "thm1.json", json!({"schema_version": 1, "type": "thm1", "C": 1.5, "depth": depth}));
    let o = rrde(dir, &["construct", "--config", &cfg, "--out", out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn assert_manifest_complete(dir: &Path) {
    let m = read_json(&dir.join("manifest.json"));
    let listed: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    for entry in std::fs::read_dir(dir).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name != "manifest.json" {
            assert!(listed.contains(&name.as_str()), "{name} missing from the manifest");
        }
    }
    for f in m["files"].as_array().unwrap() {
        let bytes = std::fs::read(dir.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
    }
    for key in ["command", "config", "seeds", "tool_version", "started_at", "finished_at"] {
        assert!(!m[key].is_null(), "manifest lacks {key}");
    }
}

#[test]
fn thm1_construction_writes_paths_and_reference() {
    let tmp = tempfile::tempdir().unwrap();
    construct_thm1(tmp.path(), "c", 500);
    let c = tmp.path().join("c");
    for f in ["lambda.json", "gamma.json", "reference.csv", "construction.json"] {
        assert!(c.join(f).is_file(), "{f}");
    }
    assert_manifest_complete(&c);
    let m = read_json(&c.join("manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config"]["C"], 1.5);
    assert_eq!(csv_rows(&c.join("reference.csv")).len(), 1501);
}

#[test]
fn exact_simulation_reproduces_the_reference_table() {
    let tmp = tempfile::tempdir().unwrap();
    construct_thm1(tmp.path(), "c", 500);
    let cfg = write_config(
        tmp.path(),
        "sim.json",
        json!({
            "schema_version": 1,
            "mode": "paths",
            "backend": "exact",
            "lambda": {"file": "c/lambda.json"},
            "gamma": {"file": "c/gamma.json"},
            "initial": {"construction": {"file": "c/construction.json", "eta": 1.0}},
        }),
    );
    let o = rrde(tmp.path(), &["simulate", "--config", &cfg, "--out", "s"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_manifest_complete(&tmp.path().join("s"));
    let got = csv_rows(&tmp.path().join("s/trajectory.csv"));
    let want = csv_rows(&tmp.path().join("c/reference.csv"));
    for row in &want {
        assert!(got.contains(row), "reference row {row:?} not reproduced");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    construct_thm1(tmp.path(), "a", 200);
    construct_thm1(tmp.path(), "b", 200);
    let (a, b) = (read_json(&tmp.path().join("a/manifest.json")), read_json(&tmp.path().join("b/manifest.json")));
    assert_eq!(a["files"], b["files"]);
}

#[test]
fn json_format_switches_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t.json", json!({"schema_version": 1, "type": "thm1", "C": 2.0, "depth": 20}));
    let o = rrde(tmp.path(), &["construct", "--config", &cfg, "--out", "j", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(&tmp.path().join("j/reference.json"));
    assert_eq!(r["meta"]["backend"], "reference");
    assert!(!tmp.path().join("j/reference.csv").exists());
}

#[test]
fn unique_modulus_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "t2.json",
        json!({"schema_version": 1, "type": "thm2", "omega": {"family": "holder", "alpha": 0.5}}),
    );
    let o = rrde(tmp.path(), &["construct", "--config", &cfg, "--out", "o"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("unique"), "{}", stderr(&o));
    assert_eq!(read_json(&tmp.path().join("o/manifest.json"))["status"], "refused");
}

#[test]
fn thm2_sawtooth_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "t2.json",
        json!({"schema_version": 1, "type": "thm2", "omega": {"family": "holder", "alpha": 0.4}, "depth": 100, "membership_pairs": 500}),
    );
    let o = rrde(tmp.path(), &["construct", "--config", &cfg, "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let c = read_json(&tmp.path().join("o/construction.json"));
    assert_eq!(c["depth"], 100);
    assert!(c["membership_ratio"].as_f64().unwrap() <= 1.0);
    assert_eq!(read_json(&tmp.path().join("o/verdict.json"))["classification"], "non_unique");
}

#[test]
fn fbm_drift_window_violation_names_the_inequality() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg =
        write_config(tmp.path(), "fd.json", json!({"schema_version": 1, "type": "fbm_drift", "H": 0.2, "alpha": 3}));
    let o = rrde(tmp.path(), &["construct", "--config", &cfg, "--out", "o"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("1/(2H)"), "{}", stderr(&o));
}

#[test]
fn fbm_drift_schedule_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "fd.json",
        json!({"schema_version": 1, "type": "fbm_drift", "H": 0.2, "alpha": 2.2, "depth": 50}),
    );
    let o = rrde(tmp.path(), &["construct", "--config", &cfg, "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&tmp.path().join("o/schedule.csv"));
    assert_eq!(rows.len(), 51);
    assert_eq!(rows[0], ["0", "1", "1"]);
}

#[test]
fn schema_errors_exit_2_with_field_names() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (json!({"type": "thm1", "C": 1.5}), "schema_version"),
        (json!({"schema_version": 1, "type": "thm1", "depth": 5}), "`C`"),
        (json!({"schema_version": 1, "type": "thm1", "C": 1.5, "dpeth": 5}), "dpeth"),
        (json!({"schema_version": 1, "type": "thm3"}), "thm3"),
        (json!({"schema_version": 1, "type": "thm1", "C": 0.5}), "C"),
    ];
    for (i, (cfg, needle)) in cases.into_iter().enumerate() {
        let name = write_config(tmp.path(), &format!("c{i}.json"), cfg);
        let o = rrde(tmp.path(), &["construct", "--config", &name, "--out", &format!("o{i}")]);
        assert_eq!(code(&o), 2, "case {i}: {}", stderr(&o));
        assert!(stderr(&o).contains(needle), "case {i}: {}", stderr(&o));
    }
    let o = rrde(tmp.path(), &["construct", "--out", "none"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn prop1_accepts_and_rejects() {
    let tmp = tempfile::tempdir().unwrap();
    construct_thm1(tmp.path(), "c", 100);
    let summary = read_json(&tmp.path().join("c/construction.json"));
    let times = summary["axis_times"].clone();
    let xs = summary["xs"].clone();
    let cfg = write_config(
        tmp.path(),
        "p.json",
        json!({"schema_version": 1, "type": "prop1", "lambda": "c/lambda.json", "times": times, "xs": xs}),
    );
    let o = rrde(tmp.path(), &["construct", "--config", &cfg, "--out", "ok"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(tmp.path().join("ok/gamma.json").is_file());

    let tiny: Vec<f64> = xs.as_array().unwrap().iter().map(|x| x.as_f64().unwrap() * 1e-3).collect();
    let cfg = write_config(
        tmp.path(),
        "p2.json",
        json!({"schema_version": 1, "type": "prop1", "lambda": "c/lambda.json", "times": times, "xs": tiny}),
    );
    let o = rrde(tmp.path(), &["construct", "--config", &cfg, "--out", "bad"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("x_lower_bound"), "{}", stderr(&o));
    assert_eq!(read_json(&tmp.path().join("bad/rejection.json"))["condition"], "x_lower_bound");
}

#[test]
fn euler_pushes_a_constant_signal_to_the_wall() {
    let tmp = tempfile::tempdir().unwrap();
    for (x0, name) in [(1.0, "one"), (0.5, "half")] {
        let cfg = write_config(
            tmp.path(),
            &format!("{name}.json"),
            json!({
                "schema_version": 1,
                "mode": "paths",
                "backend": "euler",
                "lambda": {"constant": 0.0},
                "gamma": {"density": 1.0},
                "initial": {"point": {"x": x0, "y": 0.0}},
                "steps": 64,
            }),
        );
        let o = rrde(tmp.path(), &["simulate", "--config", &cfg, "--out", name]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        for row in csv_rows(&tmp.path().join(format!("{name}/trajectory.csv"))) {
            let t: f64 = row[0].parse().unwrap();
            let x: f64 = row[1].parse().unwrap();
            let k: f64 = row[3].parse().unwrap();
            assert!((x - f64::max(x0 - t, 0.0)).abs() <= 1e-15, "t = {t}: x = {x}");
            assert!((k - f64::max(t - x0, 0.0)).abs() <= 1e-15, "t = {t}: K = {k}");
        }
    }
}

#[test]
fn exact_backend_rejects_euler_only_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let base = json!({
        "schema_version": 1,
        "mode": "paths",
        "backend": "exact",
        "gamma": {"density": 1.0},
        "initial": {"point": {"x": 0.5, "y": 1.0}},
    });
    let mut fbm = base.clone();
    fbm["lambda"] = json!({"fbm": {"H": 0.2, "grid_size": 64}});
    construct_thm1(tmp.path(), "c", 50);
    let mut both = base.clone();
    both["lambda"] = json!({"file": "c/lambda.json"});
    for (name, cfg) in [("fbm", fbm), ("both_vary", both)] {
        let file = write_config(tmp.path(), &format!("{name}.json"), cfg);
        let o = rrde(tmp.path(), &["simulate", "--config", &file, "--out", name]);
        assert_eq!(code(&o), 2, "{name}: {}", stderr(&o));
        assert!(stderr(&o).contains("euler") || stderr(&o).contains("Euler"), "{}", stderr(&o));
    }
}

#[test]
fn figure2_is_deterministic_and_nonnegative() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "f2.json",
        json!({"schema_version": 1, "mode": "figure2", "grid_size": 2048, "ell0": [1e-3, 1e-9]}),
    );
    for out in ["a", "b"] {
        let o = rrde(tmp.path(), &["simulate", "--config", &cfg, "--seed", "2024", "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for run in ["figure2_run0.csv", "figure2_run1.csv", "lambda.csv"] {
        let a = std::fs::read(tmp.path().join("a").join(run)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(run)).unwrap();
        assert_eq!(a, b, "{run}");
    }
    let rows = csv_rows(&tmp.path().join("a/figure2_run1.csv"));
    assert_eq!(rows.len(), 2049);
    assert!(rows.iter().all(|r| r[1].parse::<f64>().unwrap() >= 0.0));
    assert_eq!(read_json(&tmp.path().join("a/manifest.json"))["seeds"]["base"], 2024);
    assert_manifest_complete(&tmp.path().join("a"));
}

#[test]
fn modulus_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    for (family, param, want) in [
        ("holder", "0.5", "unique"),
        ("holder", "0.4", "non_unique"),
        ("sqrt_log", "0.5", "unique"),
        ("sqrt_log", "0.8", "non_unique"),
    ] {
        let o = rrde(tmp.path(), &["modulus", family, param, "--out", "m"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["classification"], want, "{family} {param}");
        assert_eq!(read_json(&tmp.path().join("m/verdict.json"))["classification"], want);
    }
    let cfg = write_config(
        tmp.path(),
        "tab.json",
        json!({"schema_version": 1, "omega": {"family": "tabulated", "points": [[1e-12, 1e-6], [1e-6, 1e-3], [1.0, 1.0]]}}),
    );
    let o = rrde(tmp.path(), &["modulus", "--config", &cfg, "--out", "t"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&rrde(tmp.path(), &["modulus", "wiggly", "1", "--out", "w"])), 2);
    assert_eq!(code(&rrde(tmp.path(), &["modulus", "holder", "1.5", "--out", "w"])), 2);
}

#[test]
fn fbm_tasks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.json",
        json!({"schema_version": 1, "task": "sample", "H": 0.3, "grid_size": 16, "paths": 2, "seed": 5}),
    );
    for out in ["a", "b"] {
        assert_eq!(code(&rrde(tmp.path(), &["fbm", "--config", &cfg, "--out", out])), 0);
    }
    let a = std::fs::read(tmp.path().join("a/fbm_path1.csv")).unwrap();
    assert_eq!(a, std::fs::read(tmp.path().join("b/fbm_path1.csv")).unwrap());
    assert_eq!(csv_rows(&tmp.path().join("a/fbm_path1.csv")).len(), 17);
    assert_manifest_complete(&tmp.path().join("a"));

    let cfg = write_config(
        tmp.path(),
        "sb.json",
        json!({"schema_version": 1, "task": "small_ball", "H": 0.5, "grid_size": 256, "x": [1.0, 0.5], "replications": 2000}),
    );
    let o = rrde(tmp.path(), &["fbm", "--config", &cfg, "--out", "sb"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(&tmp.path().join("sb/report.json"));
    let f: Vec<f64> = (0..2).map(|i| r["results"][i]["estimate"]["frequency"].as_f64().unwrap()).collect();
    assert!(f[0] > f[1], "{f:?}");

    let cfg = write_config(
        tmp.path(),
        "st.json",
        json!({"schema_version": 1, "task": "statistics", "H": 0.2, "alpha": 2.2, "depth": 10, "grid_size": 4096, "paths": 3, "moment_replications": 500}),
    );
    let o = rrde(tmp.path(), &["fbm", "--config", &cfg, "--out", "st"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let st = read_json(&tmp.path().join("st/statistics.json"));
    assert_eq!(st["paths"].as_array().unwrap().len(), 3);
    assert_eq!(st["paths"][0]["S_centered"].as_array().unwrap().len(), 10);
}

#[test]
fn verify_suites() {
    let tmp = tempfile::tempdir().unwrap();
    for suite in ["skorokhod", "thm1", "moduli"] {
        let o = rrde(tmp.path(), &["verify", suite, "--out", suite]);
        assert_eq!(code(&o), 0, "{suite}: {}", String::from_utf8_lossy(&o.stdout));
        let r = read_json(&tmp.path().join(suite).join("report.json"));
        assert_eq!(r["pass"], true);
        assert!(r["checks"].as_array().unwrap().iter().all(|c| c["suite"] == suite));
    }
    assert_eq!(code(&rrde(tmp.path(), &["verify", "everything", "--out", "x"])), 2);
}
