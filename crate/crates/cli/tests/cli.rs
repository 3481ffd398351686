use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
setting = "tiny"
observer_bias = "high"
n_trips = 30
max_steps = 200
replicates = 3
base_seed = 11
nx = 20
ny = 20

[[observers]]
count = 1
kind = "mobile"
"#;

const MODEL: &str = r#"{
    "grid": {"region": {"xmin": 0, "xmax": 10, "ymin": 0, "ymax": 10}, "nx": 10, "ny": 10},
    "blocks": [{"name": "env", "kind": "environment", "covariates": [{"name": "intercept", "builtin": "intercept"}]}]
}"#;

const QUADRATIC: &str = r#"{
    "grid": {"region": {"xmin": 0, "xmax": 10, "ymin": 0, "ymax": 10}, "nx": 10, "ny": 10},
    "blocks": [{"name": "env", "kind": "environment", "covariates": [
        {"name": "intercept", "builtin": "intercept"},
        {"name": "x", "builtin": "x"}, {"name": "y", "builtin": "y"},
        {"name": "x2", "builtin": "x2"}, {"name": "y2", "builtin": "y2"}, {"name": "xy", "builtin": "xy"}
    ]}],
    "optimizer": {"max_iterations": 1}
}"#;

fn effortud(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_effortud"))
        .args(args)
        .current_dir(dir)
        .env("EFFORTUD_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn ascii(values: impl Fn(usize, usize) -> f64) -> String {
    let mut s = String::from("ncols 10\nnrows 10\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n");
    for row in 0..10 {
        let line: Vec<String> = (0..10).map(|col| values(row, col).to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

fn read_ascii_values(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(6)
        .flat_map(|l| l.split_whitespace().map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect()
}

fn points_csv(n: usize) -> String {
    let mut s = String::from("x,y\n");
    for i in 0..n {
        s.push_str(&format!("{},{}\n", 0.5 + (i % 10) as f64 * 0.93, 0.25 + (i / 10) as f64 * 1.7));
    }
    s
}

#[test]
fn simulate_is_byte_identical_and_lists_replicates() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("study.toml"), CONFIG).unwrap();
    for out in ["a", "b"] {
        let o = effortud(&["simulate", "--config", "study.toml", "--out", out], dir.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["manifest.json", "replicate-000/encounters.csv", "replicate-002/tracks.csv"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    let reps = manifest["replicates"].as_array().unwrap();
    assert_eq!(reps.len(), 3);
    assert_eq!(reps[2]["replicate_seed"], 11 ^ 2);
    let encounters = fs::read_to_string(dir.path().join("a/replicate-001/encounters.csv")).unwrap();
    assert_eq!(encounters.lines().count() - 1, reps[1]["n_encounters"].as_u64().unwrap() as usize);
    assert!(reps[1]["n_encounters"].as_u64().unwrap() <= 30);

    let o = effortud(&["simulate", "--config", "study.toml", "--out", "c", "--seed", "12"], dir.path());
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(dir.path().join("a/replicate-000/tracks.csv")).unwrap(), fs::read(dir.path().join("c/replicate-000/tracks.csv")).unwrap());
}

#[test]
fn effort_from_simulated_tracks() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("study.toml"), CONFIG).unwrap();
    assert_eq!(code(&effortud(&["simulate", "--config", "study.toml", "--out", "sim"], dir.path())), 0);
    let tracks = "sim/replicate-000/tracks.csv";
    let o = effortud(&["effort", "--tracks", tracks, "--nx", "20", "--ny", "20", "--range", "10", "--out", "e.asc"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let plain = read_ascii_values(&dir.path().join("e.asc"));
    assert_eq!(plain.len(), 400);
    assert!(plain.iter().all(|v| *v >= 0.0) && plain.iter().sum::<f64>() > 0.0);

    let o = effortud(&["effort", "--tracks", tracks, "--nx", "20", "--ny", "20", "--overlap", "--out", "o.asc"], dir.path());
    assert_eq!(code(&o), 0);
    // one observer per trip: nothing overlaps
    let ovl = read_ascii_values(&dir.path().join("o.asc"));
    for (a, b) in plain.iter().zip(&ovl) {
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
}

#[test]
fn fit_predict_homogeneous() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("model.json"), MODEL).unwrap();
    fs::write(p.join("effort.asc"), ascii(|_, _| 2.0)).unwrap();
    fs::write(p.join("pts.csv"), points_csv(50)).unwrap();
    let o = effortud(&["fit", "--model", "model.json", "--points", "pts.csv", "--effort", "effort.asc", "--out", "fit.json"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value = serde_json::from_slice(&fs::read(p.join("fit.json")).unwrap()).unwrap();
    let b = fit["coefficients"][0].as_f64().unwrap();
    // 100 unit cells with effort 2
    assert!((b - (50.0f64 / 200.0).ln()).abs() < 1e-8, "{b}");
    assert_eq!(fit["names"][0], "env.intercept");
    assert_eq!(fit["optimizer"]["max_iterations"], 500);

    let o = effortud(&["predict", "--model", "model.json", "--fit", "fit.json", "--effort", "effort.asc", "--out", "raw.asc"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = effortud(&["predict", "--model", "model.json", "--fit", "fit.json", "--effort", "effort.asc", "--fix-effort", "1", "--out", "true.asc"], p);
    assert_eq!(code(&o), 0);
    let raw = read_ascii_values(&p.join("raw.asc"));
    let truth = read_ascii_values(&p.join("true.asc"));
    for (r, t) in raw.iter().zip(&truth) {
        assert!((r - 0.5).abs() < 1e-8 && (t - 0.25).abs() < 1e-8);
    }
    let o = effortud(&["predict", "--model", "model.json", "--fit", "fit.json", "--ud", "--out", "ud.asc"], p);
    assert_eq!(code(&o), 0);
    let ud = read_ascii_values(&p.join("ud.asc"));
    assert!((ud.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn exceedance_cutoff_masks_cells() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let model = QUADRATIC.replace("\"max_iterations\": 1", "\"max_iterations\": 500");
    fs::write(p.join("model.json"), model).unwrap();
    let mut pts = String::from("x,y\n");
    for i in 0..400 {
        let t = i as f64 * 0.61803398875;
        let r = 2.5 * ((i % 17) as f64 / 17.0).sqrt();
        pts.push_str(&format!("{},{}\n", 5.0 + r * (t * 6.283).cos(), 5.0 + r * (t * 6.283).sin()));
    }
    fs::write(p.join("pts.csv"), pts).unwrap();
    let o = effortud(&["fit", "--model", "model.json", "--points", "pts.csv", "--out", "fit.json"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let args = ["exceed", "--model", "model.json", "--fit", "fit.json", "--samples", "200", "--seed", "3"];
    let o = effortud(&[&args[..], &["--out", "all.asc"]].concat(), p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = effortud(&[&args[..], &["--cutoff", "0.95", "--out", "cut.asc"]].concat(), p);
    assert_eq!(code(&o), 0);
    let all = read_ascii_values(&p.join("all.asc"));
    let cut = read_ascii_values(&p.join("cut.asc"));
    assert!(all.iter().all(|v| (0.0..=1.0).contains(v)));
    let kept = cut.iter().filter(|v| **v != -9999.0).count();
    assert!(kept > 0 && kept < 100);
    for (a, c) in all.iter().zip(&cut) {
        if *a >= 0.95 {
            assert_eq!(a, c);
        } else {
            assert_eq!(*c, -9999.0);
        }
    }
}

#[test]
fn experiment_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("study.toml"), CONFIG.replace("replicates = 3", "replicates = 2")).unwrap();
    for out in ["m1.json", "m2.json"] {
        let o = effortud(&["experiment", "--config", "study.toml", "--out", out, "--summary", "table.txt"], p);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("mspe_corrected"));
    }
    assert_eq!(fs::read(p.join("m1.json")).unwrap(), fs::read(p.join("m2.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(p.join("m1.json")).unwrap()).unwrap();
    assert_eq!(report["records"].as_array().unwrap().len(), 2);
    assert!(fs::read_to_string(p.join("table.txt")).unwrap().starts_with("setting: tiny"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("bad.toml"), "setting = \"x\"\nn_trips = \"many\"\n").unwrap();
    let o = effortud(&["simulate", "--config", "bad.toml", "--out", "o"], p);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"), "{}", String::from_utf8_lossy(&o.stderr));

    fs::write(p.join("model.json"), MODEL).unwrap();
    let o = effortud(&["fit", "--model", "model.json", "--points", "missing.csv", "--out", "f.json"], p);
    assert_eq!(code(&o), 3);

    fs::write(p.join("far.csv"), "x,y\n1,1\n50,50\n").unwrap();
    let o = effortud(&["fit", "--model", "model.json", "--points", "far.csv", "--out", "f.json"], p);
    assert_eq!(code(&o), 3);

    fs::write(p.join("q.json"), QUADRATIC).unwrap();
    fs::write(p.join("pts.csv"), points_csv(40)).unwrap();
    let o = effortud(&["fit", "--model", "q.json", "--points", "pts.csv", "--out", "q_fit.json"], p);
    assert_eq!(code(&o), 4);
    assert!(p.join("q_fit.json").exists());

    let o = Command::new(env!("CARGO_BIN_EXE_effortud"))
        .args(["experiment", "--config", "bad.toml", "--out", "m.json"])
        .current_dir(p)
        .env("EFFORTUD_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
