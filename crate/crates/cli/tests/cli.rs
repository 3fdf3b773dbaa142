use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn sqleval(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqleval"))
        .arg("--workdir")
        .arg(workdir)
        .arg("-q")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn unknown_verb_prints_help_and_fails() {
    let wd = tempfile::tempdir().unwrap();
    let o = sqleval(wd.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("Usage"), "{err}");
    assert_eq!(sqleval(wd.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn classify_reads_stdin() {
    let wd = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_sqleval"))
        .arg("--workdir")
        .arg(wd.path())
        .args(["classify", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"SELECT name FROM students WHERE age > 20")
        .unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success());
    assert_eq!(stdout(&o), "c1 1.3\n");

    let bad = wd.path().join("bad.sql");
    std::fs::write(&bad, "SELEC name FRM").unwrap();
    assert_eq!(sqleval(wd.path(), &["classify", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn compare_reports_metrics() {
    let wd = tempfile::tempdir().unwrap();
    let gen = wd.path().join("gen.sql");
    let gt = wd.path().join("gt.sql");
    std::fs::write(&gen, "select E.NAME from emp as E where E.salary > 1").unwrap();
    std::fs::write(&gt, "SELECT name FROM emp WHERE salary > 1").unwrap();
    let args = |mode| {
        vec![
            "compare".to_string(),
            "--gen".into(),
            gen.display().to_string(),
            "--gt".into(),
            gt.display().to_string(),
            "--db".into(),
            "company".into(),
            "--mode".into(),
            mode,
        ]
    };
    let o = Command::new(env!("CARGO_BIN_EXE_sqleval"))
        .arg("--workdir")
        .arg(wd.path())
        .args(args("strict".into()))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["ea"], true);
    assert_eq!(v["em"], true);
    assert_eq!(v["gt_label"], "c1 1.3");

    let o = sqleval(wd.path(), &args("fuzzy".into()).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_report_augment_round_trip() {
    let wd = tempfile::tempdir().unwrap();
    let cfg = wd.path().join("run.yaml");
    std::fs::write(
        &cfg,
        "run_id: r1\n\
         workload: {id: demo_hard}\n\
         models:\n  \
           - {model_id: oracle, kind: mock_oracle}\n  \
           - {model_id: noorder, kind: mock_mutant, settings: {mutation: drop_order_by}}\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let o = sqleval(wd.path(), &["run", "--config", cfg, "--workers", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["records"], 40);

    // an existing run id is a runtime failure
    assert_eq!(sqleval(wd.path(), &["run", "--config", cfg]).status.code(), Some(2));

    let o = sqleval(wd.path(), &["report", "--run", "r1", "--format", "csv"]);
    let csv = stdout(&o);
    assert!(csv.starts_with("model_id,metric,level,group,score,support\n"));
    assert!(csv.contains("oracle,EA,overall,overall,1.0,20"));
    let o = sqleval(wd.path(), &["report", "--run", "r1"]);
    let on_disk = std::fs::read_to_string(wd.path().join("runs/r1/report.json")).unwrap();
    assert_eq!(stdout(&o), on_disk);
    assert_eq!(sqleval(wd.path(), &["report", "--run", "missing"]).status.code(), Some(1));

    let augment = |threshold: &str| {
        sqleval(
            wd.path(),
            &["augment", "--run", "r1", "--threshold", threshold, "--per-subcat", "3", "--min-support", "1", "--model", "noorder"],
        )
    };
    assert_eq!(augment("0").status.code(), Some(1));
    let o = augment("0.1");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["version"], 2);
    assert_eq!(v["added"].as_array().unwrap().len(), 6);
    assert!(wd.path().join("workloads/demo_hard/v2.jsonl").exists());
}

#[test]
fn invalid_config_is_a_validation_error() {
    let wd = tempfile::tempdir().unwrap();
    let cfg = wd.path().join("bad.json");
    std::fs::write(&cfg, r#"{"workload": {"id": "demo_easy"}, "models": [], "tau": 0}"#).unwrap();
    let o = sqleval(wd.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
}

#[test]
fn scale_and_align_write_artifacts() {
    let wd = tempfile::tempdir().unwrap();
    let o = sqleval(wd.path(), &["scale", "--db", "company", "--factor", "2", "--seed", "7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(Path::new(stdout(&o).trim()).exists());
    assert_eq!(sqleval(wd.path(), &["scale", "--db", "nope", "--factor", "2"]).status.code(), Some(1));

    let target = wd.path().join("t.json");
    std::fs::write(&target, r#"{"c1": 0.5, "c2": 0.5}"#).unwrap();
    let o = sqleval(wd.path(), &["align", "--workload", "demo_easy", "--target", target.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let id = v["workload_id"].as_str().unwrap();
    assert!(wd.path().join("workloads").join(id).join("v1.jsonl").exists());
}
