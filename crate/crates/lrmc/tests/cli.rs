use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lrmc::{parse_matrix, read_matrix, write_matrix_csv, CompletionSummary, MatrixCsvError, Summary};
use lrmc_core::DMatrix;

fn lrmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrmc")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_owned()
}

const SMALL: [&str; 8] = ["--set", "num_users=8", "--set", "num_items=10", "--set", "horizon=30", "--set", "repetitions=2"];

#[test]
fn simulate_oracle_has_zero_regret() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = lrmc(&["simulate", "--set", "policy=\"oracle\"", "--set", "horizon=5", "--set", "repetitions=1", "--out", &out_arg(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("per_round.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("round,per_round_regret,cumulative_regret,policy,seed"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(*row, format!("{},0.0,0.0,oracle,0", k + 1));
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for policy in ["octal", "etc:5", "ucb"] {
        let (a, b) = (dir.path().join(format!("{policy}-a")), dir.path().join(format!("{policy}-b")));
        for out in [&a, &b] {
            let mut args = vec!["simulate", "--seed", "7"];
            args.extend(SMALL);
            let set = format!("policy=\"{policy}\"");
            args.extend(["--set", &set, "--out"]);
            let out = out_arg(out);
            args.push(&out);
            let o = lrmc(&args);
            assert!(o.status.success(), "{}", stderr(&o));
        }
        for file in ["per_round.csv", "summary.json"] {
            assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{policy} {file}");
        }
    }
}

#[test]
fn realized_column_is_optional() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["simulate", "--set", "realized_column=true", "--set", "policy=\"ucb\"", "--out"];
    let out = out_arg(dir.path());
    args.push(&out);
    args.extend(SMALL);
    assert!(lrmc(&args).status.success());
    let text = fs::read_to_string(dir.path().join("per_round.csv")).unwrap();
    assert!(text.starts_with("round,per_round_regret,cumulative_regret,policy,seed,realized_regret\n"));
    assert_eq!(text.lines().count(), 1 + 30 * 2);
}

#[test]
fn sweep_gap_writes_table_and_round_tripping_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep-gap", "--set", "gap_grid=[0.3, 0.6]", "--set", "policies=[\"etc:5\", \"ucb\"]", "--out"];
    let out = out_arg(dir.path());
    args.push(&out);
    args.extend(SMALL);
    let o = lrmc(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("sweep_gap.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("gap,policy,mean_regret,std_regret,runs"));
    assert_eq!(lines.count(), 4);
    let json = fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let summary: Summary = serde_json::from_str(&json).unwrap();
    assert_eq!(summary.points.len(), 4);
    assert_eq!(summary.config.gap_grid, [0.3, 0.6]);
    assert_eq!(serde_json::to_string_pretty(&summary).unwrap() + "\n", json);
}

#[test]
fn empty_gap_grid_is_a_config_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = lrmc(&["sweep-gap", "--set", "gap_grid=[]", "--out", &out_arg(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gap_grid"));
    assert!(!out.exists());
}

#[test]
fn sweep_explore_rejects_non_etc_policies() {
    let dir = tempfile::tempdir().unwrap();
    let o = lrmc(&["sweep-explore", "--set", "policy=\"ucb\"", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ETC"));
}

#[test]
fn sweep_explore_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep-explore", "--set", "policy=\"etc\"", "--set", "m_grid=[2, 6]", "--out"];
    let out = out_arg(dir.path());
    args.push(&out);
    args.extend(SMALL);
    let o = lrmc(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("sweep_explore.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "exploration_m,gap,mean_regret,std_regret,runs");
    assert!(lines[1].starts_with("2,0.5,") && lines[2].starts_with("6,0.5,"));
}

#[test]
fn unknown_keys_and_bad_values_exit_with_code_2() {
    let o = lrmc(&["simulate", "--set", "bogus=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"));
    let o = lrmc(&["simulate", "--set", "horizon=0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizon"));
    let o = lrmc(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_files_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = lrmc(&["simulate", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.toml"));
    let o = lrmc(&["complete", "--set", "csv_path=\"/definitely/not/here.csv\"", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/definitely/not/here.csv"));
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "num_users = 4\nnum_items = 5\nhorizon = 9\npolicy = \"fixed:2\"\nrepetitions = 1\n").unwrap();
    let out = dir.path().join("o");
    let o = lrmc(&["simulate", "--config", cfg.to_str().unwrap(), "--set", "horizon=3", "--out", &out_arg(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: Summary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.config.horizon, 3);
    assert_eq!(summary.config.num_users, 4);
    assert_eq!(summary.runs[0].policy, "fixed:2");
}

#[test]
fn complete_recovers_a_full_noiseless_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("m.csv");
    let truth = DMatrix::from_fn(6, 9, |i, j| (i as f64 - 2.0) * (j as f64 + 1.0) / 20.0);
    write_matrix_csv(&input, &truth).unwrap();
    let out = dir.path().join("o");
    let csv = format!("csv_path=\"{}\"", input.display());
    let o = lrmc(&["complete", "--set", &csv, "--set", "sigma2=0.0", "--set", "p=1.0", "--set", "lambda=1e-6", "--out", &out_arg(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let est = read_matrix(&out.join("estimate.csv")).unwrap();
    assert!((est - &truth).amax() < 1e-4);
    let summary: CompletionSummary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!((summary.report.rows, summary.report.cols), (6, 9));
    assert!(summary.report.max_abs_error < 1e-4);
}

#[test]
fn csv_loader_examples() {
    let m = parse_matrix("1, 0\n0 ,1\n\n", Path::new("x")).unwrap();
    assert_eq!(m, DMatrix::identity(2, 2));
    match parse_matrix("1,2,3\n4,5\n", Path::new("x")) {
        Err(MatrixCsvError::Ragged { row, expected, found, .. }) => assert_eq!((row, expected, found), (2, 3, 2)),
        other => panic!("{other:?}"),
    }
    match parse_matrix("1,2\n3,abc\n", Path::new("x")) {
        Err(MatrixCsvError::NotNumeric { row, column, .. }) => assert_eq!((row, column), (2, 2)),
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_matrix("", Path::new("x")), Err(MatrixCsvError::Empty { .. })));
}
