use std::f64::consts::TAU;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn curveflow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curveflow")).args(args).current_dir(dir).env_remove("CURVEFLOW_THREADS").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn value(out: &str, key: &str) -> f64 {
    out.lines().find_map(|l| l.strip_prefix(&format!("{key} "))).unwrap_or_else(|| panic!("{key} missing in {out}")).trim().parse().unwrap()
}

fn write_open_curve(path: &Path, n: usize, f: impl Fn(f64) -> (f64, f64)) {
    let pts: Vec<[f64; 2]> = (0..n).map(|k| TAU * k as f64 / (n - 1) as f64).map(|t| f(t).into()).collect();
    fs::write(path, serde_json::json!({ "closed": false, "points": pts }).to_string()).unwrap();
}

#[test]
fn m1_distance_between_circles_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let n = 8192;
    write_open_curve(&dir.path().join("r1.json"), n, |t| (t.cos(), t.sin()));
    write_open_curve(&dir.path().join("r4.json"), n, |t| (4.0 * t.cos(), 4.0 * t.sin()));
    let o = curveflow(&["distance", "--metric", "M1", "r1.json", "r4.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let exact = (TAU * (16.0 * (4f64.powf(0.25) - 1.0).powi(2) + 4.0)).sqrt();
    let d = value(&stdout(&o), "distance");
    assert!((d - exact).abs() < 1e-6 * exact, "{d} vs {exact}");
    assert!(value(&stdout(&o), "bound_valid") <= d);
}

#[test]
fn m2_transform_round_trips_a_line() {
    let dir = tempfile::tempdir().unwrap();
    write_open_curve(&dir.path().join("line.json"), 64, |t| (0.5 * t, 0.0));
    let o = curveflow(&["transform", "--metric", "M2", "line.json", "--output", "line.r.json"], dir.path());
    assert_eq!(code(&o), 0);
    let o = curveflow(&["transform", "--inverse", "line.r.json", "--output", "back.json"], dir.path());
    assert_eq!(code(&o), 0);
    let read = |name: &str| -> Vec<f64> {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(name)).unwrap()).unwrap();
        v["points"].as_array().unwrap().iter().flat_map(|p| [p[0].as_f64().unwrap(), p[1].as_f64().unwrap()]).collect()
    };
    let err = read("line.json").iter().zip(read("back.json")).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-8, "{err}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_open_curve(&dir.path().join("c.json"), 32, |t| (t.cos(), t.sin()));
    assert_eq!(code(&curveflow(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&curveflow(&["-N", "4", "demo", "fig3"], dir.path())), 2);
    assert_eq!(code(&curveflow(&["distance", "missing.json", "c.json"], dir.path())), 2);
    assert_eq!(code(&curveflow(&["demo", "fig2", "--which", "3"], dir.path())), 2);
    // M3 needs closed curves: a domain error.
    let o = curveflow(&["distance", "--metric", "M3", "c.json", "c.json"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("closed"));
    let o = Command::new(env!("CARGO_BIN_EXE_curveflow")).args(["curvature", "--scal2"]).env("CURVEFLOW_THREADS", "zero").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn fig2_demo_writes_snapshots_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let o = curveflow(&["demo", "fig2", "--which", "1", "-o", "out"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(value(&out, "max_constraint_norm") < 1e-9);
    let d = dir.path().join("out/fig2_1");
    for f in ["manifest.json", "points.csv", "diagnostics.csv", "trajectory.csv", "rattle_diagnostics.csv", "curve_0000.json", "curve_0010.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["samples"], 100);
    assert_eq!(manifest["times"].as_array().unwrap().len(), 11);
    assert!((manifest["times"][10].as_f64().unwrap() - 2.0).abs() < 1e-9);
    // One energy row per step plus the initial state.
    assert_eq!(fs::read_to_string(d.join("rattle_diagnostics.csv")).unwrap().lines().count(), 2002);
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert_eq!(code(&curveflow(&["-N", "48", "demo", "fig3", "-o", out], dir.path())), 0);
    }
    let (a, b) = (dir.path().join("a/fig3"), dir.path().join("b/fig3"));
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 5);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"samples": 32, "snapshots": 3, "out_dir": "from_cfg"}"#).unwrap();
    assert_eq!(code(&curveflow(&["--config", "cfg.json", "demo", "fig3"], dir.path())), 0);
    let count = |p: &Path| fs::read_dir(p).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("curve_")).count();
    assert_eq!(count(&dir.path().join("from_cfg/fig3")), 3);
    assert_eq!(code(&curveflow(&["--config", "cfg.json", "--snapshots", "5", "demo", "fig3", "-o", "flag"], dir.path())), 0);
    assert_eq!(count(&dir.path().join("flag/fig3")), 5);
    fs::write(dir.path().join("bad.json"), r#"{"samples": "many"}"#).unwrap();
    assert_eq!(code(&curveflow(&["--config", "bad.json", "validate"], dir.path())), 2);
}

#[test]
fn validate_passes_and_scal2_table_is_printed() {
    let dir = tempfile::tempdir().unwrap();
    let o = curveflow(&["validate"], dir.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("0 failed"));
    let o = curveflow(&["curvature", "--scal2", "--x-min", "1", "--x-max", "2", "--count", "2"], dir.path());
    assert_eq!(stdout(&o), "x,scal2\n1,-3\n2,-0.75\n");
}

#[test]
fn m2_sectional_curvature_is_non_positive() {
    let dir = tempfile::tempdir().unwrap();
    let n = 64;
    write_open_curve(&dir.path().join("c.json"), n, |t| (t, 0.3 * t.sin()));
    let field = |f: fn(f64) -> [f64; 2]| serde_json::json!({ "values": (0..n).map(|k| f(TAU * k as f64 / (n - 1) as f64)).collect::<Vec<_>>() }).to_string();
    fs::write(dir.path().join("h.json"), field(|t| [0.1 * t.cos(), t.sin()])).unwrap();
    fs::write(dir.path().join("k.json"), field(|t| [0.2, (2.0 * t).cos()])).unwrap();
    let o = curveflow(&["curvature", "--curve", "c.json", "--h", "h.json", "--k", "k.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(value(&stdout(&o), "sectional_curvature_m2") <= 1e-12);
}
