//! End-to-end runs of the `cassi` binary: exit codes, determinism, write-once outputs.

use std::path::Path;
use std::process::{Command, Output};

fn cassi(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cassi"))
        .arg("--output-dir")
        .arg(out)
        .args(args)
        .env_remove("CASSI_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn render_map_reconstruct_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let (r, m, q) = (tmp.path().join("render"), tmp.path().join("map"), tmp.path().join("recon"));
    let o = cassi(&r, &["render", "--system", "AP", "--scene", "slits", "--size", "64", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["scene.cssi", "mask.pgm", "acquisition.cssi", "render_report.toml", "manifest.toml"] {
        assert!(r.join(f).exists(), "{f}");
    }
    let o = cassi(&m, &["map", "--system", "AP", "--size", "64", "--subsamples", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = cassi(&q, &[
        "reconstruct",
        "--acquisition",
        path(&r.join("acquisition.cssi")),
        "--mapping",
        path(&m.join("mapping.cssi")),
        "--mask",
        path(&r.join("mask.pgm")),
        "--truth",
        path(&r.join("scene.cssi")),
        "--subsamples",
        "4",
        "--iterations",
        "20",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let quality = std::fs::read_to_string(q.join("quality.toml")).unwrap();
    assert!(quality.contains("psnr_db"), "{quality}");
    let manifest = std::fs::read_to_string(q.join("manifest.toml")).unwrap();
    assert!(manifest.contains("command = \"reconstruct\""), "{manifest}");
}

#[test]
fn same_seed_gives_identical_acquisitions() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |dir: &str, seed: &str| {
        let d = tmp.path().join(dir);
        let o = cassi(&d, &["render", "--system", "mSP", "--size", "24", "--rays", "4", "--seed", seed]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(d.join("acquisition.cssi")).unwrap()
    };
    let (a, b, c) = (run("a", "9"), run("b", "9"), run("c", "10"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn outputs_are_write_once() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cassi(tmp.path(), &["map", "--system", "SP", "--size", "8"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let before = std::fs::read(tmp.path().join("mapping.cssi")).unwrap();
    let o = cassi(tmp.path(), &["map", "--system", "SP", "--size", "16"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("exists"), "{}", stderr(&o));
    assert_eq!(std::fs::read(tmp.path().join("mapping.cssi")).unwrap(), before);
}

#[test]
fn mismatched_mapping_is_a_geometry_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (r, m) = (tmp.path().join("render"), tmp.path().join("map"));
    assert_eq!(code(&cassi(&r, &["render", "--system", "SP", "--size", "24", "--rays", "2"])), 0);
    assert_eq!(code(&cassi(&m, &["map", "--system", "SP", "--size", "16"])), 0);
    let o = cassi(&tmp.path().join("recon"), &[
        "reconstruct",
        "--acquisition",
        path(&r.join("acquisition.cssi")),
        "--mapping",
        path(&m.join("mapping.cssi")),
        "--mask",
        path(&r.join("mask.pgm")),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let e = stderr(&o);
    assert!(e.contains("16") && e.contains("24"), "{e}");
}

#[test]
fn unknown_system_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cassi(tmp.path(), &["validate", "XP"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("XP"));
}

#[test]
fn malformed_design_config_reports_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("design.toml");
    std::fs::write(&cfg, "grid_n = 7\n[adam]\nlr = = 1\n").unwrap();
    let o = cassi(&tmp.path().join("out"), &["design", "--config", path(&cfg)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn zero_iteration_design_echoes_the_start() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cassi(tmp.path(), &["design", "--iterations", "0", "--refine-iterations", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: toml::Table = std::fs::read_to_string(tmp.path().join("design_report.toml")).unwrap().parse().unwrap();
    let flat = |v: &toml::Value| -> Vec<f64> {
        let t = v.as_table().unwrap();
        let mut out = Vec::new();
        for k in ["a1_deg", "a2_deg", "alpha_c_deg", "glass1", "glass2"] {
            match &t[k] {
                toml::Value::Array(a) => out.extend(a.iter().map(|x| x.as_float().unwrap())),
                x => out.push(x.as_float().unwrap()),
            }
        }
        out
    };
    for (a, b) in flat(&report["initial"]).iter().zip(flat(&report["relaxed"])) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    let trace = std::fs::read_to_string(tmp.path().join("loss_trace.csv")).unwrap();
    assert_eq!(trace.trim(), "iteration,loss");
    assert!(tmp.path().join("design_system.toml").exists());
}

#[test]
fn validate_passes_on_shipped_systems() {
    for name in ["AP", "mSP"] {
        let tmp = tempfile::tempdir().unwrap();
        let o = cassi(tmp.path(), &["validate", name, "--probes", "5", "--size", "32"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let table = std::fs::read_to_string(tmp.path().join("validate.txt")).unwrap();
        assert!(!table.contains("FAIL"), "{table}");
        assert_eq!(String::from_utf8_lossy(&o.stdout), table);
        if name == "mSP" {
            assert!(table.contains("y spread"));
        }
    }
}

#[test]
fn output_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_cassi"))
        .args(["analyze", "--system", "SP", "--grid", "5", "--rays", "19"])
        .env("CASSI_OUTPUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["analysis.toml", "distortion.csv", "spots.csv", "manifest.toml"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}
