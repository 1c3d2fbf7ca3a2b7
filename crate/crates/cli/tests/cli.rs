use std::path::Path;
use std::process::{Command, Output};

fn morphonet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morphonet")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn jones(out: &Path) -> Output {
    morphonet(&["jones-rate", "--set", "counts=[4,8,16]", "--set", "budget=20", "--seed", "7", "--out", out.to_str().unwrap()])
}

#[test]
fn repeated_runs_write_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&jones(&a)), 0);
    assert_eq!(code(&jones(&b)), 0);
    assert_eq!(manifest(&a)["files"], manifest(&b)["files"]);
    assert_eq!(manifest(&a)["config"]["seed"], 7);
}

#[test]
fn verify_detects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(code(&jones(&out)), 0);
    let m = out.join("manifest.json");
    let ok = morphonet(&["verify", m.to_str().unwrap(), "--rerun", tmp.path().join("again").to_str().unwrap()]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));

    std::fs::write(out.join("rates.csv"), "m,rms\n").unwrap();
    let bad = morphonet(&["verify", m.to_str().unwrap()]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("rates.csv"));
}

#[test]
fn invalid_parameters_exit_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = morphonet(&["compile-pattern", "--set", "T0=2", "--set", "T=1", "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("T0"));

    let o = morphonet(&["jones-rate", "--set", "colour=3", "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    let cfg = tmp.path().join("rd.json");
    std::fs::write(&cfg, r#"{"experiment": {"kind": "rd-meinhardt"}}"#).unwrap();
    let o = morphonet(&["jones-rate", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_files_exit_with_io_code() {
    let o = morphonet(&["jones-rate", "--config", "/nonexistent/config.json"]);
    assert_eq!(code(&o), 1);
    let o = morphonet(&["verify", "/nonexistent/manifest.json"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn superpose_reads_member_files() {
    let tmp = tempfile::tempdir().unwrap();
    let member = tmp.path().join("member.json");
    std::fs::write(
        &member,
        r#"{"m":1,"kinds":["sigmoid"],"K":[0.0],"R":[1.0],"lambda":[1.0],"d":[0.0],"eta":[0.0],"theta":["constant(-2.0)"],"output_gene":0}"#,
    )
    .unwrap();
    let out = tmp.path().join("sum");
    let o = morphonet(&[
        "superpose",
        "--member",
        member.to_str().unwrap(),
        "--member",
        member.to_str().unwrap(),
        "--f",
        "u1 + u2",
        "--m0",
        "10",
        "--budget",
        "50",
        "--output",
        "linear",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["genes"], 1 + 1 + 10 + 1);
    assert!(summary["report"]["sup_error"].as_f64().unwrap() < 0.05);
}
