use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn attrcom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attrcom"))
        .args(args)
        .env_remove("ATTRCOM_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/two-triangles").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small synthetic dataset into `dir`.
fn gen_into(dir: &Path) {
    let o = attrcom(&["gen", "--n", "120", "--k", "4", "--attributes", "20", "--seed", "2", "--out", s(dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn help_lists_every_subcommand() {
    let o = attrcom(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for sub in ["detect", "leiden", "refine", "metrics", "gen", "ablate", "convert"] {
        assert!(text.contains(sub), "missing {sub} in help");
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(attrcom(&["detect", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(attrcom(&["bogus"]).status.code(), Some(1));
    let o = attrcom(&["detect", "--edges", s(&fixture("edges.txt")), "--mu=-1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mu"));
}

#[test]
fn missing_labels_file_exits_2_naming_the_flag() {
    let o = attrcom(&["detect", "--edges", s(&fixture("edges.txt")), "--labels", "/nonexistent/labels.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--labels"), "{}", stderr(&o));
}

#[test]
fn malformed_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.txt");
    fs::write(&edges, "a b c d\n").unwrap();
    let o = attrcom(&["leiden", "--edges", s(&edges)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn gen_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = attrcom(&["gen", "--n", "300", "--k", "6", "--seed", "7", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["edges.txt", "attributes.csv", "labels.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn metrics_table_matches_golden() {
    let o = attrcom(&[
        "metrics",
        "--edges",
        s(&fixture("edges.txt")),
        "--labels",
        s(&fixture("labels.txt")),
        "--assignment",
        s(&fixture("assignment.tsv")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/metrics_two_triangles.txt");
    assert_eq!(stdout(&o), fs::read_to_string(golden).unwrap());
}

#[test]
fn metrics_of_labels_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    gen_into(dir.path());
    let labels = dir.path().join("labels.txt");
    let o = attrcom(&["metrics", "--edges", s(&dir.path().join("edges.txt")), "--labels", s(&labels), "--assignment", s(&labels)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let row = stdout(&o).lines().nth(1).unwrap().to_string();
    let cols: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(cols[2], "100.0", "{row}");
    assert_eq!(cols[4], "100.0", "{row}");
}

#[test]
fn json_output_parses() {
    let o = attrcom(&[
        "--json",
        "metrics",
        "--edges",
        s(&fixture("edges.txt")),
        "--assignment",
        s(&fixture("assignment.tsv")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["modularity"].as_f64().unwrap() - 5.0 / 14.0).abs() < 1e-12);
    assert!(v["nmi"].is_null());
}

fn detect(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let (edges, attrs, labels) = (data.join("edges.txt"), data.join("attributes.csv"), data.join("labels.txt"));
    let mut args = vec![
        "--threads",
        "1",
        "detect",
        "--edges",
        s(&edges),
        "--attrs",
        s(&attrs),
        "--labels",
        s(&labels),
        "--epochs",
        "40",
        "--hidden",
        "32,16,8",
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    attrcom(&args)
}

#[test]
fn detect_writes_results_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_into(&data);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let model = dir.path().join("model.bin");
    let first = detect(&data, &a, &["--save-model", s(&model)]);
    let second = detect(&data, &b, &[]);
    assert!(first.status.success(), "{}", stderr(&first));
    for f in ["assignment.tsv", "metrics.json", "config.json", "timings.json"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    assert!(model.exists());
    assert_eq!(fs::read(a.join("metrics.json")).unwrap(), fs::read(b.join("metrics.json")).unwrap());
    // the first line names the output directory, which differs
    let body = |o: &Output| stdout(o).lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&first), body(&second));
}

#[test]
fn modified_split_reports_connected_communities() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = attrcom(&[
        "gen", "--n", "120", "--k", "4", "--attributes", "20", "--disconnected-fraction", "0.5", "--out", s(&data),
    ]);
    assert!(o.status.success());
    let out = dir.path().join("out");
    let o = detect(&data, &out, &["--mode", "modified-split"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let row = stdout(&o).lines().nth(2).unwrap().to_string();
    assert_eq!(row.split_whitespace().nth(5), Some("1.00"), "{row}");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["connectivity"].as_f64(), Some(1.0));
    assert_eq!(m["mode"], "modified-split");
}

#[test]
fn leiden_and_refine_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    gen_into(dir.path());
    let edges = dir.path().join("edges.txt");
    let labels = dir.path().join("labels.txt");
    let out = dir.path().join("leiden.tsv");
    let o = attrcom(&["leiden", "--edges", s(&edges), "--labels", s(&labels), "--runs", "4", "--output", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(&out).unwrap().starts_with("id\tcommunity\n"));

    let o = attrcom(&["--json", "refine", "--edges", s(&edges), "--labels", s(&labels), "--runs", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["refined"]["connectivity"].as_f64(), Some(1.0));
    assert_eq!(v["labels"]["nmi"].as_f64(), Some(1.0));
}

#[test]
fn convert_then_load() {
    let dir = tempfile::tempdir().unwrap();
    let content = dir.path().join("toy.content");
    let cites = dir.path().join("toy.cites");
    fs::write(&content, "p1\t1\t0\tA\np2\t0\t1\tA\np3\t1\t1\tB\n").unwrap();
    fs::write(&cites, "p1\tp2\np2\tp3\np3\tp9\n").unwrap();
    let out = dir.path().join("plain");
    let o = attrcom(&["convert", "--content", s(&content), "--cites", s(&cites), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("1 citations to unknown ids skipped"), "{}", stdout(&o));
    let o = attrcom(&[
        "leiden",
        "--edges",
        s(&out.join("edges.txt")),
        "--labels",
        s(&out.join("labels.txt")),
        "--runs",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn ablate_writes_every_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_into(&data);
    let out = dir.path().join("out");
    let o = attrcom(&[
        "ablate",
        "--edges",
        s(&data.join("edges.txt")),
        "--attrs",
        s(&data.join("attributes.csv")),
        "--labels",
        s(&data.join("labels.txt")),
        "--modes",
        "lm-only,full",
        "--repeats",
        "2",
        "--epochs",
        "10",
        "--hidden",
        "16,8,4",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let runs: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    let modes: Vec<&str> = runs.as_array().unwrap().iter().map(|r| r["mode"].as_str().unwrap()).collect();
    assert_eq!(modes, ["full", "full", "lm-only", "lm-only"]);
    assert_eq!(stdout(&o).lines().count(), 5);
}
