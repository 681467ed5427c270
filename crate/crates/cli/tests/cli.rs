use std::path::Path;
use std::process::{Command, Output};

fn ahmose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ahmose"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let out = ahmose(&[
        "data",
        "synth",
        "--seed",
        "5",
        "--rows-per-group",
        "10",
        "--out",
        p(dir.path()),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["train.csv", "test.csv", "rules.json"] {
        assert!(dir.path().join(f).is_file());
    }
    let train = dir.path().join("train.csv");
    let out = ahmose(&["data", "validate", p(&train), "--group-tag", "year"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("rows: 20"), "{text}");
    assert!(text.contains("groups: 2010, 2011"), "{text}");
}

#[test]
fn validate_rejects_bad_csv() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.csv");
    std::fs::write(&f, "a,b,GTQ\n1,x,2\n3,4,5\n").unwrap();
    let out = ahmose(&["data", "validate", p(&f)]);
    assert!(!out.status.success());
    assert!(stderr(&out).starts_with("error:"), "{}", stderr(&out));
}

#[test]
fn knowledge_build_writes_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let rules = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../fixtures/vineyard_rules.json"
    );
    let out_file = dir.path().join("iv.json");
    let out = ahmose(&[
        "knowledge",
        "build",
        "--rules",
        rules,
        "--radius",
        "0.5",
        "--bounds",
        "1",
        "5",
        "--out",
        p(&out_file),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("[4.250, 5.000]"), "{text}");
    let set =
        ahmose_core::knowledge::parse_interval_file(&std::fs::read_to_string(&out_file).unwrap())
            .unwrap();
    assert_eq!(set.intervals.len(), 12);
}

#[test]
fn run_failure_is_stage_tagged() {
    let dir = tempfile::tempdir().unwrap();
    let out = ahmose(&[
        "run",
        "--train",
        p(&dir.path().join("missing.csv")),
        "--interest",
        p(&dir.path().join("missing.csv")),
        "--rules",
        p(&dir.path().join("missing.json")),
        "--out",
        p(&dir.path().join("proj")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("[load]"), "{}", stderr(&out));
}

#[test]
fn automl_and_score_on_small_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(ahmose(&[
        "data",
        "synth",
        "--seed",
        "2",
        "--rows-per-group",
        "12",
        "--out",
        p(d)
    ])
    .status
    .success());
    let board = d.join("board.json");
    let out = ahmose(&[
        "automl",
        "--train",
        p(&d.join("train.csv")),
        "--group-tag",
        "year",
        "--k",
        "3",
        "--out",
        p(&board),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("M0"));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&board).unwrap()).unwrap();
    assert_eq!(doc["leaderboard"][0]["rank"], 1);
    assert_eq!(doc["selected"].as_array().unwrap().len(), 8);

    let proj = d.join("proj");
    let out = ahmose(&[
        "run",
        "--train",
        p(&d.join("train.csv")),
        "--interest",
        p(&d.join("test.csv")),
        "--rules",
        p(&d.join("rules.json")),
        "--group-tag",
        "year",
        "--k",
        "3",
        "--top-per-family",
        "1",
        "--out",
        p(&proj),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = ahmose(&["score", "--project", p(&proj), "--json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["ranking"].as_array().unwrap().len(), 4);
    let out = ahmose(&["score", "--project", p(&proj), "--intervals", "nope"]);
    assert!(!out.status.success());
}

#[test]
fn serve_reports_busy_port() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(ahmose(&[
        "data",
        "synth",
        "--seed",
        "2",
        "--rows-per-group",
        "8",
        "--out",
        p(d)
    ])
    .status
    .success());
    let proj = d.join("root").join("proj");
    let run = ahmose(&[
        "run",
        "--train",
        p(&d.join("train.csv")),
        "--interest",
        p(&d.join("test.csv")),
        "--rules",
        p(&d.join("rules.json")),
        "--group-tag",
        "year",
        "--k",
        "2",
        "--top-per-family",
        "1",
        "--out",
        p(&proj),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap().to_string();
    let out = Command::new(env!("CARGO_BIN_EXE_ahmose"))
        .args(["serve", "--root", p(&d.join("root"))])
        .env("AHMOSE_BIND", &addr)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("already in use"), "{}", stderr(&out));
}
