use std::fs;
use std::path::{Path, PathBuf};

use glidebench_cli::{run, EXIT_IO, EXIT_OK, EXIT_VALIDATION};
use serde_json::Value;

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("glidebench").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn noiseless_run_recovers_true_perf() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let (code, stdout, _) = call(&[
        "run",
        "--scenario",
        &fixture("abc_campaign.json"),
        "--duration",
        "7200",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.contains("3 results"));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let scores: Vec<(String, f64)> = summary["scores"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| {
            (
                s["entry_id"].as_str().unwrap().to_string(),
                s["median_score"].as_f64().unwrap(),
            )
        })
        .collect();
    assert_eq!(
        scores,
        vec![("a".into(), 100.0), ("b".into(), 300.0), ("c".into(), 50.0)]
    );
    assert_eq!(summary["plan"]["gap"], 0.0);
    let trace = fs::read_to_string(out.join("trace.jsonl")).unwrap();
    assert!(trace.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
    // The committed store is what this run writes.
    assert_eq!(
        fs::read_to_string(out.join("results.jsonl")).unwrap(),
        fs::read_to_string(fixture("abc_results.jsonl")).unwrap()
    );
}

#[test]
fn seed_flag_overrides_scenario_seed() {
    let dir = tempfile::tempdir().unwrap();
    let read = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let (code, ..) = call(&[
            "run",
            "--scenario",
            &fixture("abc_campaign.json"),
            "--duration",
            "7200",
            "--seed",
            seed,
            "--out",
            p(&out),
        ]);
        assert_eq!(code, EXIT_OK);
        fs::read(out.join("results.jsonl")).unwrap()
    };
    assert_eq!(read("x", "7"), fs::read(fixture("abc_results.jsonl")).unwrap());
    assert_ne!(read("y", "8"), read("x", "7"));
}

#[test]
fn validation_and_io_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let (code, _, err) = call(&[
        "run",
        "--scenario",
        p(&dir.path().join("missing.json")),
        "--duration",
        "10",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, EXIT_VALIDATION, "{err}");

    let bad = dir.path().join("bad.json");
    fs::write(
        &bad,
        r#"{"seed": 1, "entries": [{"entry_id": "", "price_per_hour": -1, "max_pilots": 1, "true_perf": 1}],
        "specs": [], "policies": {"mode": "all_due", "spec_id": "s1"}}"#,
    )
    .unwrap();
    let (code, _, err) = call(&["run", "--scenario", p(&bad), "--duration", "10", "--out", p(&out)]);
    assert_eq!(code, EXIT_VALIDATION);
    assert!(
        err.contains("entry_id empty") && err.contains("price_per_hour negative"),
        "{err}"
    );

    let (code, ..) = call(&[
        "run",
        "--scenario",
        &fixture("abc.json"),
        "--duration",
        "-5",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, EXIT_VALIDATION);
    let (code, ..) = call(&[
        "plan",
        "--store",
        &fixture("abc_results.jsonl"),
        "--scenario",
        &fixture("abc.json"),
        "--demand",
        "0",
        "--spec",
        "s1",
    ]);
    assert_eq!(code, EXIT_VALIDATION);
    let (code, ..) = call(&["frobnicate"]);
    assert_eq!(code, EXIT_VALIDATION);

    let (code, ..) = call(&["scores", "--store", p(&dir.path().join("nope.jsonl"))]);
    assert_eq!(code, EXIT_IO);
    // The output directory cannot be created under a regular file.
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let (code, ..) = call(&[
        "run",
        "--scenario",
        &fixture("abc.json"),
        "--duration",
        "10",
        "--out",
        p(&blocker.join("sub")),
    ]);
    assert_eq!(code, EXIT_IO);
    let (code, out_text, _) = call(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out_text.contains("plan"));
}

#[test]
fn empty_store_prints_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("empty.jsonl");
    fs::write(&store, "").unwrap();
    let (code, out, _) = call(&["scores", "--store", p(&store)]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("entry_id"));
}

fn csv_rows(path: &PathBuf) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect()
}

/// Each printed data row starts with the CSV cells, in order, as tokens.
fn printed_matches_csv(printed: &str, rows: &[Vec<String>], header: &str) {
    let data: Vec<&str> = printed
        .lines()
        .skip_while(|l| !l.starts_with(header))
        .skip(1)
        .take_while(|l| !l.starts_with('#'))
        .collect();
    assert_eq!(data.len(), rows.len());
    for (line, row) in data.iter().zip(rows) {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let joined = row.join(" ");
        let cells: Vec<&str> = joined.split_whitespace().collect();
        assert_eq!(tokens, cells, "{line}");
        for cell in row {
            if let Ok(x) = cell.parse::<f64>() {
                assert_eq!(x.to_string().parse::<f64>().unwrap(), x);
            }
        }
    }
}

#[test]
fn plan_over_abc_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("plan.csv");
    let (code, out, _) = call(&[
        "plan",
        "--store",
        &fixture("abc_results.jsonl"),
        "--scenario",
        &fixture("abc.json"),
        "--demand",
        "650",
        "--spec",
        "s1",
        "--csv",
        p(&csv),
    ]);
    assert_eq!(code, EXIT_OK);
    let rows = csv_rows(&csv);
    assert_eq!(rows[0][..5], ["greedy", "4.40", "650", "true", "0.0"]);
    assert_eq!(rows[1][..2], ["oracle", "4.40"]);
    assert_eq!(rows[0][5], "b:2 c:1");
    printed_matches_csv(&out, &rows, "planner");
}

#[test]
fn plan_over_trap_fixture() {
    let (code, out, _) = call(&[
        "plan",
        "--store",
        &fixture("trap_results.jsonl"),
        "--scenario",
        &fixture("trap.json"),
        "--demand",
        "100",
        "--spec",
        "s1",
    ]);
    assert_eq!(code, EXIT_OK);
    let greedy = out.lines().find(|l| l.starts_with("greedy")).unwrap();
    let oracle = out.lines().find(|l| l.starts_with("oracle")).unwrap();
    assert!(
        greedy.contains("2.00") && greedy.contains("96.1") && greedy.contains("a:2"),
        "{greedy}"
    );
    assert!(oracle.contains("1.02") && oracle.contains("b:1"), "{oracle}");
}

#[test]
fn plan_reports_unknown_entries() {
    // An entry with no results is listed for benchmarking.
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("partial.jsonl");
    let full = fs::read_to_string(fixture("abc_results.jsonl")).unwrap();
    let kept: Vec<&str> = full.lines().filter(|l| !l.contains(r#""entry_id":"c""#)).collect();
    fs::write(&store, kept.join("\n") + "\n").unwrap();
    let (code, out, _) = call(&[
        "plan",
        "--store",
        p(&store),
        "--scenario",
        &fixture("abc.json"),
        "--demand",
        "650",
        "--spec",
        "s1",
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("# unknown (benchmark these): c"), "{out}");
}

#[test]
fn scores_sorted_by_price_performance_and_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("scores.csv");
    let (code, out, _) = call(&[
        "scores",
        "--store",
        &fixture("abc_results.jsonl"),
        "--scenario",
        &fixture("abc.json"),
        "--csv",
        p(&csv),
    ]);
    assert_eq!(code, EXIT_OK);
    let rows = csv_rows(&csv);
    let order: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    // 2/300 < 0.4/50 < 1/100
    assert_eq!(order, ["b", "c", "a"]);
    printed_matches_csv(&out, &rows, "entry_id");
    let (code, plain, _) = call(&["scores", "--store", &fixture("abc_results.jsonl"), "--spec", "s1"]);
    assert_eq!(code, EXIT_OK);
    let order: Vec<&str> = plain
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(order, ["a", "b", "c"]);
}

#[test]
fn results_newest_first_with_filters() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("results.csv");
    let (code, out, _) = call(&[
        "results",
        "--store",
        &fixture("abc_results.jsonl"),
        "--limit",
        "2",
        "--csv",
        p(&csv),
    ]);
    assert_eq!(code, EXIT_OK);
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 2);
    let t: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(t[0] >= t[1]);
    assert!(out.contains(&rows[0][3]));
    let (_, one, _) = call(&["results", "--store", &fixture("abc_results.jsonl"), "--entry", "c"]);
    assert_eq!(one.lines().count(), 2);
}

#[test]
fn corrupt_store_lines_are_reported_and_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.jsonl");
    let mut text = fs::read_to_string(fixture("abc_results.jsonl")).unwrap();
    text.push_str("{not json\n");
    fs::write(&store, text).unwrap();
    let (code, out, _) = call(&["results", "--store", p(&store)]);
    assert_eq!(code, EXIT_OK);
    assert!(out.starts_with("# skipped line"), "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("p-")).count(), 3);
}
