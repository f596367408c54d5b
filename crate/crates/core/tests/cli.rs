use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qdent::pipeline::RunManifest;
use tempfile::TempDir;

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name).to_string_lossy().into_owned()
}

fn qdent(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdent")).args(args).arg("--out").arg(out).output().unwrap()
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn find_null_on_bundled_model() {
    let dir = TempDir::new().unwrap();
    let o = qdent(&["strain", "find-null", "--config", &fixture("strain_model.toml")], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(dir.path().join("null.json"));
    assert_eq!(v["field"]["e14"], 12.0);
    assert_eq!(v["field"]["e25"], 6.67);
    let m: RunManifest = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.command, "strain find-null");
    assert_eq!(m.outputs, vec!["null.json"]);
    assert_eq!(m.config_digest.len(), 64);
}

#[test]
fn fef_curve_for_bundled_dots() {
    let dir = TempDir::new().unwrap();
    let o = qdent(&["fef-curve", "--config", &fixture("qd2.toml"), "--grid", "0,5,10"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(dir.path().join("fef_curve.json"));
    let f0 = v["rows"][0]["fef_analytic_raw"].as_f64().unwrap();
    assert!((f0 - 0.92).abs() < 0.005, "{f0}");
    let csv = fs::read_to_string(dir.path().join("fef_curve.csv")).unwrap();
    assert!(csv.starts_with("s_ueV,fef_analytic_raw,fef_analytic_corrected,fef_sim_raw,"));
    assert_eq!(csv.lines().count(), 4);

    let ideal = dir.path().join("ideal.toml");
    fs::write(&ideal, "[cascade]\ns_ueV = 0.0\ntau_x_ns = 0.05\ntau_xx_ns = 0.02\nk = 1.0\n").unwrap();
    let o = qdent(&["fef-curve", "--config", ideal.to_str().unwrap(), "--grid", "0:2:1"], &dir.path().join("ideal"));
    assert!(o.status.success());
    let v = json(dir.path().join("ideal/fef_curve.json"));
    assert!((v["rows"][0]["fef_analytic_raw"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn out_dir_from_environment() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_qdent"))
        .args(["strain", "scan", "--config", &fixture("qd2.toml")])
        .env(qdent::pipeline::ENV_OUT_DIR, dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("fss.json").exists() && dir.path().join("scan.csv").exists());
}

#[test]
fn exit_codes_by_failure_class() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let code = |o: Output| o.status.code().unwrap();

    assert_eq!(code(qdent(&["frobnicate"], &out)), 2);
    assert_eq!(code(qdent(&["fef-curve", "--config", &fixture("qd2.toml"), "--grid", ""], &out)), 2);
    assert_eq!(code(qdent(&["fef-curve", "--config", &fixture("qd2.toml"), "--grid", "5:1:1"], &out)), 2);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[cascade]\ns_ueV = 0.0\ntau_x_ns = -1.0\ntau_xx_ns = 0.02\nk = 0.9\n").unwrap();
    assert_eq!(code(qdent(&["fef-curve", "--config", bad.to_str().unwrap(), "--grid", "0"], &out)), 3);
    fs::write(&bad, "[cascade]\nspin = 1\n").unwrap();
    assert_eq!(code(qdent(&["fef-curve", "--config", bad.to_str().unwrap(), "--grid", "0"], &out)), 3);
    // section the command needs is absent
    assert_eq!(code(qdent(&["hom", "--config", &fixture("strain_model.toml")], &out)), 3);

    let counts = dir.path().join("counts.csv");
    fs::write(&counts, "arm_x,arm_xx,counts,acquisition_time_s\nH,H,10,1.0\nH,V,oops,1.0\n").unwrap();
    let o = qdent(&["tomography", counts.to_str().unwrap()], &out);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(o), 4);
    assert_eq!(code(qdent(&["tomography", "/nonexistent/counts.csv"], &out)), 4);

    let singular = dir.path().join("singular.toml");
    fs::write(
        &singular,
        "[strain]\nd0 = [1.0, 1.0]\nu14 = [1.0, 0.0]\nu25 = [2.0, 0.0]\ne0_eV = 1.589\nkappa_neV_per_V = [90.0, 90.0, 90.0]\nplate_thickness_um = 300.0\n",
    )
    .unwrap();
    assert_eq!(code(qdent(&["strain", "find-null", "--config", singular.to_str().unwrap()], &out)), 5);
}

#[test]
fn tomography_fixture_report() {
    let dir = TempDir::new().unwrap();
    let o = qdent(&["tomography", &fixture("qd2_counts.csv"), "--config", &fixture("qd2.toml"), "--runs", "100"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(dir.path().join("tomography.json"));
    let fef = v["metrics"]["fef"].as_f64().unwrap();
    let err = v["metric_errors"]["fef"].as_f64().unwrap();
    assert!((fef - 0.919).abs() < 3.0 * err, "{fef} ± {err}");
    assert!(v["g2_corrected"]["fef"].as_f64().unwrap() > fef);
}
