//! End-to-end tests driving the `dkmips` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dkmips"))
}

struct Fixture {
    _dir: tempfile::TempDir,
    items: PathBuf,
    queries: PathBuf,
    root: PathBuf,
}

/// The four-item fixture: p1=(1,1), p2=(1,0), p3=(2,0), p4=(0,2), q=(.5,.5).
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let items = dir.path().join("items.csv");
    let queries = dir.path().join("queries.csv");
    std::fs::write(&items, "1,1\n1,0\n2,0\n0,2\n").unwrap();
    std::fs::write(&queries, "0.5,0.5\n").unwrap();
    Fixture {
        root: dir.path().to_path_buf(),
        _dir: dir,
        items,
        queries,
    }
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_lines(out: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).expect("valid JSON line"))
        .collect()
}

fn query_fixture(f: &Fixture, extra: &[&str]) -> Vec<serde_json::Value> {
    let mut args = vec![
        "query",
        "--data",
        f.items.to_str().unwrap(),
        "--queries",
        f.queries.to_str().unwrap(),
        "--mode",
        "max",
        "-k",
        "3",
        "--lambda",
        "0.5",
        "--mu",
        "0.3333333333333333",
    ];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    stdout_lines(&out)
}

#[test]
fn query_greedy_golden() {
    let f = fixture();
    let records = query_fixture(&f, &["--algo", "greedy"]);
    assert_eq!(records.len(), 1);
    let r = &records[0];
    assert_eq!(r["query_id"], 0);
    assert_eq!(r["algo"], "greedy");
    assert_eq!(r["items"], serde_json::json!([0, 1, 2]));
    let objective = r["objective"].as_f64().unwrap();
    assert!((objective - 1.0 / 12.0).abs() < 1e-12);
    assert!(r.get("items_scanned").is_none(), "no counters for scans");
}

#[test]
fn query_bc_greedy_matches_greedy_and_reports_counters() {
    let f = fixture();
    let plain = query_fixture(&f, &["--algo", "greedy"]);
    let tree = query_fixture(&f, &["--algo", "bc-greedy"]);
    assert_eq!(plain[0]["items"], tree[0]["items"]);
    assert_eq!(plain[0]["objective"], tree[0]["objective"]);
    assert!(tree[0]["items_scanned"].is_u64());
    assert!(tree[0]["nodes_pruned"].is_u64());
}

#[test]
fn query_dual_early_exit() {
    let f = fixture();
    let records = query_fixture(&f, &["--algo", "dual"]);
    let r = &records[0];
    assert_eq!(r["items"], serde_json::json!([2, 3]));
    let objective = r["objective"].as_f64().unwrap();
    assert!((objective - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn query_linear_sorts_by_inner_product() {
    let f = fixture();
    let records = query_fixture(&f, &["--algo", "linear"]);
    assert_eq!(records[0]["items"], serde_json::json!([0, 2, 3]));
}

#[test]
fn query_writes_jsonl_file() {
    let f = fixture();
    let out_path = f.root.join("out.jsonl");
    let out = run(&[
        "query",
        "--data",
        f.items.to_str().unwrap(),
        "--queries",
        f.queries.to_str().unwrap(),
        "--algo",
        "greedy",
        "-k",
        "2",
        "--output",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(v["k"], 2);
    assert_eq!(v["mode"], "avg");
    // avg-mode default mu
    assert_eq!(v["mu"], 0.05);
}

#[test]
fn convert_roundtrips_csv_binary_csv() {
    let f = fixture();
    let bin_path = f.root.join("items.bin");
    let csv_path = f.root.join("back.csv");
    let out = run(&[
        "convert",
        "--input",
        f.items.to_str().unwrap(),
        "--to",
        "binary",
        "--output",
        bin_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = run(&[
        "convert",
        "--input",
        bin_path.to_str().unwrap(),
        "--to",
        "csv",
        "--output",
        csv_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(
        std::fs::read_to_string(&f.items).unwrap(),
        std::fs::read_to_string(&csv_path).unwrap()
    );
    // binary input is auto-detected by magic, and querying it matches csv
    let via_bin = run(&[
        "query",
        "--data",
        bin_path.to_str().unwrap(),
        "--queries",
        f.queries.to_str().unwrap(),
        "--algo",
        "greedy",
        "-k",
        "3",
        "--mode",
        "max",
        "--mu",
        "0.3333333333333333",
    ]);
    assert!(via_bin.status.success());
    let records = stdout_lines(&via_bin);
    assert_eq!(records[0]["items"], serde_json::json!([0, 1, 2]));
}

#[test]
fn verify_quick_passes() {
    let out = run(&["verify", "--quick", "--seed", "7"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("[PASS] submodularity"));
    assert!(text.contains("all 8 suites passed"));
}

#[test]
fn verify_guard_refusal_exits_4() {
    let out = run(&["verify", "--quick", "--oracle-max-n", "50", "--oracle-k", "10"]);
    assert_eq!(out.status.code(), Some(4));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("enumeration guard"), "{text}");
}

#[test]
fn missing_file_exits_3_and_bad_flag_exits_2() {
    let f = fixture();
    let out = run(&[
        "query",
        "--data",
        "no-such-file.csv",
        "--queries",
        f.queries.to_str().unwrap(),
        "--algo",
        "linear",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let out = run(&["query", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dimension_mismatch_is_reported() {
    let f = fixture();
    let bad = f.root.join("bad_queries.csv");
    std::fs::write(&bad, "1,2,3\n").unwrap();
    let out = run(&[
        "query",
        "--data",
        f.items.to_str().unwrap(),
        "--queries",
        bad.to_str().unwrap(),
        "--algo",
        "linear",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension mismatch"));
}

#[test]
fn negative_items_need_allow_negative() {
    let f = fixture();
    let neg = f.root.join("neg.csv");
    std::fs::write(&neg, "1,1\n-1,0\n").unwrap();
    let base = [
        "query",
        "--queries",
        f.queries.to_str().unwrap(),
        "--algo",
        "bc-greedy",
        "-k",
        "1",
    ];
    let mut args = base.to_vec();
    args.extend(["--data", neg.to_str().unwrap()]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(3), "load error without the flag");
    args.push("--allow-negative");
    let out = run(&args);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("non-negative"), "soundness warning expected: {text}");
}

fn write_quality_files(root: &Path) -> (PathBuf, PathBuf) {
    let cats = root.join("categories.csv");
    let ratings = root.join("ratings.csv");
    std::fs::write(&cats, "0,0\n1,0\n1,1\n2,2\n3,1\n3,2\n").unwrap();
    std::fs::write(&ratings, "0,0,5\n0,1,3\n0,2,1\n").unwrap();
    (cats, ratings)
}

#[test]
fn bench_grid_rows_and_quality_columns() {
    let f = fixture();
    let report = f.root.join("report.csv");
    let out = run(&[
        "bench",
        "--data",
        f.items.to_str().unwrap(),
        "--queries",
        f.queries.to_str().unwrap(),
        "--algos",
        "linear,bc-greedy",
        "--modes",
        "max",
        "--lambdas",
        "0.1,0.5,0.9",
        "--k",
        "2",
        "--repetitions",
        "2",
        "--output",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "algo,mode,lambda,mu,k,mean_time_ms,mean_mmr,items_scanned_frac"
    );
    assert_eq!(lines.len(), 1 + 6, "2 algos x 3 lambdas x 1 k x 1 mode");

    let (cats, ratings) = write_quality_files(&f.root);
    let report2 = f.root.join("report_quality.csv");
    let out = run(&[
        "bench",
        "--data",
        f.items.to_str().unwrap(),
        "--queries",
        f.queries.to_str().unwrap(),
        "--algos",
        "greedy",
        "--modes",
        "max",
        "--lambdas",
        "0.5",
        "--ks",
        "3",
        "--categories",
        cats.to_str().unwrap(),
        "--ratings",
        ratings.to_str().unwrap(),
        "--output",
        report2.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text2 = std::fs::read_to_string(&report2).unwrap();
    assert!(text2.starts_with(
        "algo,mode,lambda,mu,k,mean_time_ms,mean_mmr,items_scanned_frac,mean_pcc,mean_cov"
    ));
    // greedy-max picks {0,1,2}: categories {0,1,2} cover all of the user's
    let row = text2.lines().nth(1).unwrap();
    assert!(row.ends_with(",1"), "full coverage expected: {row}");

    // quality columns are bit-stable across runs
    let report3 = f.root.join("report_quality_again.csv");
    let out = run(&[
        "bench",
        "--data",
        f.items.to_str().unwrap(),
        "--queries",
        f.queries.to_str().unwrap(),
        "--algos",
        "greedy",
        "--modes",
        "max",
        "--lambdas",
        "0.5",
        "--ks",
        "3",
        "--categories",
        cats.to_str().unwrap(),
        "--ratings",
        ratings.to_str().unwrap(),
        "--output",
        report3.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let strip_time = |t: &str| -> Vec<String> {
        t.lines()
            .map(|l| {
                let cols: Vec<&str> = l.split(',').collect();
                cols.iter()
                    .enumerate()
                    .filter(|(i, _)| *i != 5)
                    .map(|(_, c)| c.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect()
    };
    assert_eq!(
        strip_time(&text2),
        strip_time(&std::fs::read_to_string(&report3).unwrap())
    );
}

#[test]
fn bench_requires_both_quality_files() {
    let f = fixture();
    let (cats, _) = write_quality_files(&f.root);
    let out = run(&[
        "bench",
        "--data",
        f.items.to_str().unwrap(),
        "--queries",
        f.queries.to_str().unwrap(),
        "--categories",
        cats.to_str().unwrap(),
        "--ks",
        "2",
        "--output",
        f.root.join("r.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
