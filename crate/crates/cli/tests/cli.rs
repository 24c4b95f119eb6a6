use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crossmix::data::{parse_csv, parse_reader, write_csv, DataError, RejectReason};
use crossmix_core::estimation::estimate_proportions;
use crossmix_core::patterns::tabulate;
use crossmix_core::{simulate_dataset, GroupingScheme, PatternId, Sequence, SimScenario};
use serde_json::Value;

const TABLE4: [(u8, usize); 7] = [(0, 29), (1, 1), (2, 1), (4, 3), (5, 2), (6, 1), (7, 3)];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crossmix"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn table4_csv() -> String {
    let mut out = String::from("pair_id,sequence,y_1A,y_1B,y_2A,y_2B\n");
    let mut id = 0;
    for (p, n) in TABLE4 {
        for k in 0..n {
            id += 1;
            let s = if k % 2 == 0 { Sequence::AB } else { Sequence::BA };
            let obs = PatternId::new(p).unwrap().mask(s).observed();
            let cells: Vec<String> =
                (0..4).map(|i| if obs[i] { format!("{}", 300 + 7 * id + 3 * i) } else { String::new() }).collect();
            out.push_str(&format!("{id},{},{}\n", s.number(), cells.join(",")));
        }
    }
    out
}

fn write_dataset(dir: &Path, seed: u64, n: usize) -> PathBuf {
    let mut scn = SimScenario::barge_like(seed);
    scn.n_pairs = n;
    let records = simulate_dataset(&scn).unwrap();
    let path = dir.join("pairs.csv");
    write_csv(&records, fs::File::create(&path).unwrap()).unwrap();
    path
}

#[test]
fn parses_examples() {
    let text = "pair_id,sequence,y_1A,y_1B,y_2A,y_2B\n7,1,310.5,,295.0,301.2\n8,2,NA,NA,NA,NA\n";
    let d = parse_reader(text.as_bytes(), "inline").unwrap();
    assert_eq!(d.records.len(), 1);
    assert_eq!(d.records[0].pattern().value(), 2);
    assert_eq!(d.records[0].values(), &[Some(310.5), None, Some(295.0), Some(301.2)]);
    assert_eq!(d.rejected.len(), 1);
    assert_eq!(d.rejected[0].reason, RejectReason::AllMissing);
    assert_eq!(d.rejected[0].line, 3);
    assert_eq!(d.malformed().count(), 0);
}

#[test]
fn rejects_bad_rows() {
    let text = "pair_id,sequence,y_1A,y_1B,y_2A,y_2B\n\
                1,1,1,2,3,4\n\
                1,2,1,2,3,4\n\
                2,3,1,2,3,4\n\
                3,1,1,abc,3,4\n\
                4,1,1,2\n\
                5,2,inf,1,1,1\n\
                ,1,1,1,1,1\n\
                6,2, 1.5 ,NA,,2e1\n";
    let d = parse_reader(text.as_bytes(), "inline").unwrap();
    let reasons: Vec<&RejectReason> = d.rejected.iter().map(|r| &r.reason).collect();
    assert_eq!(d.rows, 8);
    assert_eq!(d.records.len(), 2);
    assert_eq!(reasons[0], &RejectReason::DuplicateId);
    assert_eq!(reasons[1], &RejectReason::BadSequence("3".into()));
    assert!(matches!(reasons[2], RejectReason::NonNumeric { column: "y_1B", .. }));
    assert_eq!(reasons[3], &RejectReason::FieldCount(4));
    assert!(matches!(reasons[4], RejectReason::NonNumeric { column: "y_1A", .. }));
    assert_eq!(reasons[5], &RejectReason::EmptyId);
    assert_eq!(d.records[1].values(), &[Some(1.5), None, None, Some(20.0)]);
}

#[test]
fn fatal_file_errors() {
    assert!(matches!(parse_csv(Path::new("/nonexistent/pairs.csv")), Err(DataError::FileNotFound(_))));
    let bad = "id,sequence,y_1A,y_1B,y_2A,y_2B\n1,1,1,1,1,1\n";
    assert!(matches!(parse_reader(bad.as_bytes(), "x"), Err(DataError::MalformedHeader { .. })));
    assert!(matches!(parse_reader("".as_bytes(), "x"), Err(DataError::MalformedHeader { .. })));
}

#[test]
fn table4_counts_and_proportions() {
    let d = parse_reader(table4_csv().as_bytes(), "table4").unwrap();
    assert_eq!(d.records.len(), 40);
    let counts = tabulate(&d.records, &GroupingScheme::default());
    for p in PatternId::all() {
        let expected = TABLE4.iter().find(|(q, _)| *q == p.value()).map_or(0, |(_, n)| *n);
        assert_eq!(counts.pattern_total(p), expected, "pattern {p}");
    }
    assert_eq!(counts.by_group, vec![29, 6, 5]);
    let props = estimate_proportions(&counts).unwrap();
    assert_eq!(props.by_group, vec![0.725, 0.15, 0.125]);
}

#[test]
fn csv_round_trip() {
    let mut scn = SimScenario::barge_like(77);
    scn.n_pairs = 500;
    let records = simulate_dataset(&scn).unwrap();
    let mut buf = Vec::new();
    write_csv(&records, &mut buf).unwrap();
    let back = parse_reader(buf.as_slice(), "buffer").unwrap();
    assert!(back.rejected.is_empty());
    assert_eq!(back.records, records);
}

#[test]
fn fit_report_has_all_sections() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_dataset(dir.path(), 3, 200);
    let out = dir.path().join("report.json");
    let o = run(&["fit", "--input", input.to_str().unwrap(), "--method", "reml", "--grouping", "default", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    for key in ["analysis", "method", "input", "grouping", "pattern_counts", "proportions", "groups", "covariance", "pooled_means", "contrast", "convergence", "warnings"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["analysis"], "pattern-mixture");
    assert_eq!(v["method"], "REML");
    assert_eq!(v["groups"].as_array().unwrap().len(), 3);
    assert_eq!(v["pattern_counts"]["patterns"].as_array().unwrap().len(), 15);
    assert_eq!(v["pooled_means"].as_array().unwrap().len(), 4);
    assert_eq!(v["pattern_counts"]["total"], 200);
    let c = &v["contrast"];
    assert!(c["se"].as_f64().unwrap() > 0.0);
    assert!((0.0..=1.0).contains(&c["p_value"].as_f64().unwrap()));
    assert_eq!(v["convergence"]["converged"], true);
}

#[test]
fn naive_and_merged_groupings() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_dataset(dir.path(), 4, 200);
    let o = run(&["fit", "--input", input.to_str().unwrap(), "--naive"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["analysis"], "pattern-ignoring");
    assert_eq!(v["groups"].as_array().unwrap().len(), 1);

    let o = run(&["fit", "--input", input.to_str().unwrap(), "--grouping", "merged-dp", "--method", "ml"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let labels: Vec<&str> = v["groups"].as_array().unwrap().iter().map(|g| g["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["C", "D+P"]);
    assert_eq!(v["method"], "ML");
}

#[test]
fn grouping_file_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_dataset(dir.path(), 5, 200);
    fs::write(
        dir.path().join("groups.toml"),
        "min_pairs = 4\n[[group]]\nlabel = \"complete\"\npatterns = [0, 10, 11, 12]\n\
         [[group]]\nlabel = \"incomplete\"\npatterns = [1, 2, 3, 4, 5, 6, 7, 8, 9, 13, 14]\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "input = \"pairs.csv\"\nmethod = \"ml\"\ncontrast = [1.0, -1.0, 0.0, 0.0]\n\
         [grouping]\nfile = \"groups.toml\"\n[labels]\ntype_1 = \"R\"\ntype_2 = \"G\"\n\
         treatment_a = \"Albuterol\"\ntreatment_b = \"Placebo\"\n",
    )
    .unwrap();
    let cfg = dir.path().join("run.toml");
    let o = run(&["fit", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["grouping"]["groups"][1]["label"], "incomplete");
    assert_eq!(v["grouping"]["min_pairs"], 4);
    assert_eq!(v["contrast"]["coefficients"][1].as_f64(), Some(-1.0));
    assert_eq!(v["pooled_means"][1]["label"], "R Placebo");
    assert_eq!(v["method"], "ML");

    // Flags win over the file.
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--method", "reml", "--contrast", "-1,1,1,-1"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["method"], "REML");
    assert_eq!(v["contrast"]["coefficients"][0].as_f64(), Some(-1.0));
    let _ = input;
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_dataset(dir.path(), 6, 200);
    let missing = dir.path().join("absent.csv");
    assert_eq!(run(&["fit", "--input", missing.to_str().unwrap()]).status.code(), Some(1));

    let header = dir.path().join("header.csv");
    fs::write(&header, "pair,seq,a,b,c,d\n1,1,1,2,3,4\n").unwrap();
    assert_eq!(run(&["fit", "--input", header.to_str().unwrap()]).status.code(), Some(1));

    let malformed = dir.path().join("malformed.csv");
    let mut text = fs::read_to_string(&input).unwrap();
    text.push_str("999,1,abc,1,1,1\n");
    fs::write(&malformed, text).unwrap();
    let o = run(&["fit", "--input", malformed.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not numeric"));
    assert_eq!(run(&["validate", "--input", malformed.to_str().unwrap()]).status.code(), Some(1));

    let empty_row = dir.path().join("empty_row.csv");
    let mut text = fs::read_to_string(&input).unwrap();
    text.push_str("999,2,NA,NA,NA,NA\n");
    fs::write(&empty_row, text).unwrap();
    let o = run(&["fit", "--input", empty_row.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["input"]["rejected"][0]["reason"], "all responses missing");

    let cfg = dir.path().join("short.toml");
    fs::write(&cfg, "[optimizer]\nmax_iter = 1\n").unwrap();
    let o = run(&["fit", "--input", input.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["convergence"]["converged"], false);

    assert_eq!(run(&["fit", "--input", input.to_str().unwrap(), "--method", "gls"]).status.code(), Some(1));
    assert_eq!(run(&["fit", "--input", input.to_str().unwrap(), "--contrast", "1,2"]).status.code(), Some(1));
    assert_eq!(run(&["validate", "--input", input.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn patterns_command() {
    let o = run(&["patterns"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 15);
    let row2: Vec<&str> = rows[2].split_whitespace().collect();
    assert_eq!(&row2[..5], ["2", "X", "?", "X", "X"]);
    assert_eq!(row2.last(), Some(&"D"));
    for (p, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(fields[0], p.to_string());
        assert_eq!(fields[fields.len() - 2], if p <= 7 { "yes" } else { "no" });
    }
}

#[test]
fn simulate_smoke_and_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("rep0.csv");
    let o = run(&["simulate", "--reps", "10", "--seed", "11", "--emit-dataset", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["replicates"], 10);
    assert!(v["failures"].as_u64().unwrap() <= 1);
    assert!(v["pattern_mixture"]["coverage"].as_f64().is_some());
    let d = parse_csv(&data).unwrap();
    assert_eq!(d.records.len(), 200);

    let o = run(&["simulate", "--reps", "3", "--scenario", "non-ignorable", "--shift", "-20", "--naive", "--n-pairs", "150"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["scenario"]["n_pairs"], 150);
    assert!(v.get("pattern_ignoring").is_some());

    assert_eq!(run(&["simulate", "--scenario", "unknown"]).status.code(), Some(1));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[scenario]\nsigma = [[1.0, 2.0, 0.0, 0.0], [2.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]\n").unwrap();
    assert_eq!(run(&["simulate", "--reps", "2", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic_across_threads() {
    let a = run(&["simulate", "--reps", "16", "--seed", "5", "--threads", "1", "--naive"]);
    let b = run(&["simulate", "--reps", "16", "--seed", "5", "--threads", "3", "--naive"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["simulate", "--reps", "16", "--seed", "6", "--threads", "1", "--naive"]);
    assert_ne!(a.stdout, c.stdout);
}
