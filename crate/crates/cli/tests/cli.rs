use std::fs;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_smoothcruiser"));
    c.env_remove("SMOOTHCRUISER_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn solve_emits_json_with_values() {
    let o = run(&[
        "solve", "--env", "chain:5", "--lambda", "10", "--format", "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["V"].as_array().unwrap().len(), 5);
    assert_eq!(v["env"], "chain:5");
}

#[test]
fn complexity_csv_has_expected_header() {
    let o = run(&[
        "complexity",
        "--lambda",
        "10",
        "--points",
        "5",
        "--format",
        "csv",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let header = out.lines().next().unwrap();
    assert!(
        header.starts_with("epsilon,simulated,bound_lemma,bound_sparse,predicted_calls"),
        "{header}"
    );
    assert_eq!(out.lines().count(), 6);
}

#[test]
fn consistency_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for i in 0..2 {
        let path = dir.path().join(format!("c{i}.json"));
        let o = run(&[
            "consistency",
            "--env",
            "chain:5",
            "--lambda",
            "10",
            "--epsilon",
            "0.5",
            "--n-sim",
            "50",
            "--seed",
            "7",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        outs.push(fs::read(path).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    let v: serde_json::Value = serde_json::from_slice(&outs[0]).unwrap();
    assert_eq!(v["n_sim"], 50);
    assert_eq!(v["bound_violations"], 0);
}

#[test]
fn seed_falls_back_to_environment_variable() {
    let args = [
        "consistency",
        "--env",
        "chain:5",
        "--lambda",
        "10",
        "--epsilon",
        "0.5",
        "--n-sim",
        "20",
    ];
    let from_env = bin()
        .args(args)
        .env("SMOOTHCRUISER_SEED", "11")
        .output()
        .unwrap();
    let explicit = run(&[&args[..], &["--seed", "11"]].concat());
    let default = run(&args);
    assert_eq!(stdout(&from_env), stdout(&explicit));
    assert_ne!(stdout(&from_env), stdout(&default));
}

#[test]
fn runs_out_writes_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.csv");
    let o = run(&[
        "consistency",
        "--env",
        "chain:5",
        "--lambda",
        "10",
        "--epsilon",
        "0.5",
        "--n-sim",
        "12",
        "--runs-out",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("run_index,output"));
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 12);
    assert!(rows[0].starts_with("0,"));
}

#[test]
fn user_errors_exit_two_with_code() {
    let o = run(&["plan", "--env", "chain:5", "--epsilon", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(
        stderr(&o).trim(),
        "error: invalid-argument: accuracy must be > 0, got -1"
    );

    let o = run(&["solve", "--env", "maze:3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: invalid-argument:"));

    let o = run(&["solve", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: invalid-argument:"));
}

#[test]
fn selftest_lists_checks_and_detects_corruption() {
    let o = run(&["selftest"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let passes = stdout(&o)
        .lines()
        .filter(|l| l.starts_with("PASS "))
        .count();
    assert!(passes >= 10);

    let o = run(&["selftest", "--corrupt-constant"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(
        out.lines()
            .any(|l| l.starts_with("FAIL solver-single-state-closed-form")),
        "{out}"
    );
}
