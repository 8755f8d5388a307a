use std::path::Path;
use std::process::{Command, Output};

fn emob(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emob"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = emob(args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn summary(dir: &Path) -> Vec<(String, f64)> {
    csv::Reader::from_path(dir.join("summary.csv"))
        .unwrap()
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].parse().unwrap())
        })
        .collect()
}

fn out_arg(dir: &Path) -> &str {
    dir.to_str().unwrap()
}

#[test]
fn run_writes_three_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    ok(&[
        "run",
        "--scenario",
        "builtin",
        "--model",
        "evba",
        "--out",
        out_arg(&d),
    ]);
    for f in ["schedule.csv", "summary.csv", "manifest.json"] {
        assert!(d.join(f).is_file(), "{f}");
    }
    assert_eq!(read(&d, "schedule.csv").lines().count(), 1 + 3 * 24);
}

#[test]
fn oracle_evca_matches_evba() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["run", "--model", "evba", "--out", out_arg(&a)]);
    ok(&[
        "run",
        "--model",
        "evca",
        "--boundary",
        "oracle",
        "--obc-known",
        "true",
        "--noise",
        "off",
        "--out",
        out_arg(&b),
    ]);
    for ((fa, va), (fb, vb)) in summary(&a).iter().zip(summary(&b)) {
        assert_eq!(fa, &fb);
        assert!((va - vb).abs() <= 1e-6, "{fa}: {va} vs {vb}");
    }
}

#[test]
fn invalid_scenario_path() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("never");
    let out = emob(&[
        "run",
        "--scenario",
        "/no/such/file.json",
        "--out",
        out_arg(&d),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.exists());
}

#[test]
fn invalid_scenario_content() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, "{\"time_grid\": 3}").unwrap();
    let d = tmp.path().join("d");
    let out = emob(&[
        "run",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        out_arg(&d),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("time_grid"));
}

#[test]
fn infeasible_itinerary_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut s = emob_core::builtin_illustrative();
    s.itineraries[0].states[7] = emob_core::scenario::StepState::Driving { e_run: 39.0 };
    let path = tmp.path().join("s.json");
    std::fs::write(&path, s.to_json_string()).unwrap();
    let out = emob(&[
        "run",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        out_arg(&tmp.path().join("d")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn issue3_rows() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["compare", "--issues", "3", "--out", out_arg(tmp.path())]);
    let mut r = csv::Reader::from_path(tmp.path().join("issue3.csv")).unwrap();
    let h = r.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let (obc, imb) = (col("obc_known"), col("imbalance_kwh"));
    let rows: Vec<(String, f64)> = r
        .records()
        .map(|x| {
            let x = x.unwrap();
            (x[obc].to_string(), x[imb].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 2);
    for (known, v) in rows {
        assert_eq!(v > 0.0, known == "false", "obc_known={known}: {v}");
    }
    assert!(tmp.path().join("comparison.csv").is_file());
    assert!(tmp.path().join("manifest.json").is_file());
}

#[test]
fn issue1_seed_rows() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "compare",
        "--issues",
        "1",
        "--seeds",
        "100",
        "--out",
        out_arg(tmp.path()),
    ]);
    let mut r = csv::Reader::from_path(tmp.path().join("issue1.csv")).unwrap();
    let kind = r
        .headers()
        .unwrap()
        .iter()
        .position(|c| c == "row_kind")
        .unwrap();
    let kinds: Vec<String> = r.records().map(|x| x.unwrap()[kind].to_string()).collect();
    let count = |k: &str| kinds.iter().filter(|x| *x == k).count();
    assert_eq!(count("run"), 100);
    assert_eq!(count("mean"), 1);
    assert_eq!(count("std"), 1);
}

#[test]
fn unknown_issue() {
    let tmp = tempfile::tempdir().unwrap();
    let out = emob(&["compare", "--issues", "5", "--out", out_arg(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown issue id"));
}

#[test]
fn chart_views() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("run");
    ok(&["run", "--model", "evba", "--out", out_arg(&d)]);
    ok(&["chart", "--in", out_arg(&d), "--view", "ev"]);
    let svg = read(&d, "chart_ev.svg");
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let limits: Vec<f64> = doc
        .descendants()
        .filter(|n| n.has_tag_name("line") && n.attribute("class") == Some("limit"))
        .map(|n| n.attribute("data-limit-kw").unwrap().parse().unwrap())
        .collect();
    assert_eq!(limits, [4.0, 8.0, 12.0]);

    ok(&["chart", "--in", out_arg(&d), "--view", "aggregate"]);
    let svg = read(&d, "chart_aggregate.svg");
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let outlines: Vec<&str> = doc
        .descendants()
        .filter(|n| n.has_tag_name("polyline") && n.attribute("class") == Some("outline"))
        .map(|n| n.attribute("points").unwrap())
        .collect();
    assert_eq!(outlines.len(), 2);
    assert_eq!(outlines[0], outlines[1]);

    ok(&["chart", "--in", out_arg(&d), "--view", "cs"]);
    roxmltree::Document::parse(&read(&d, "chart_cs.svg")).unwrap();
}

#[test]
fn chart_of_zero_schedule() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("run");
    ok(&["run", "--model", "evba", "--out", out_arg(&d)]);
    let text = read(&d, "schedule.csv");
    let mut zeroed = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            zeroed.push_str(line);
        } else {
            let f: Vec<&str> = line.split(',').collect();
            zeroed.push_str(&format!("{},{},0,0,0,20,0,0", f[0], f[1]));
        }
        zeroed.push('\n');
    }
    std::fs::write(d.join("schedule.csv"), zeroed).unwrap();
    ok(&["chart", "--in", out_arg(&d), "--view", "aggregate"]);
    roxmltree::Document::parse(&read(&d, "chart_aggregate.svg")).unwrap();
}

#[test]
fn chart_without_input() {
    let tmp = tempfile::tempdir().unwrap();
    let out = emob(&[
        "chart",
        "--in",
        out_arg(&tmp.path().join("missing")),
        "--view",
        "ev",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&[
            "run",
            "--model",
            "evca",
            "--noise",
            "on",
            "--seed",
            "9",
            "--out",
            out_arg(d),
        ]);
    }
    for f in ["schedule.csv", "summary.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let (c, e) = (tmp.path().join("c"), tmp.path().join("e"));
    for d in [&c, &e] {
        ok(&[
            "compare",
            "--issues",
            "1,2",
            "--seeds",
            "5",
            "--out",
            out_arg(d),
        ]);
    }
    for f in ["issue1.csv", "issue2.csv", "comparison.csv"] {
        assert_eq!(
            std::fs::read(c.join(f)).unwrap(),
            std::fs::read(e.join(f)).unwrap(),
            "{f}"
        );
    }
}
