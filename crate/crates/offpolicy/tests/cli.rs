//! End-to-end checks of the command-line interface: exit codes, output
//! formats and seed determinism.

use std::path::PathBuf;
use std::process::{Command, Output};

fn offpolicy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_offpolicy")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 output")
}

#[test]
fn solve_prints_a_json_report() {
    let out = offpolicy(&["solve", "--env", "aliased", "--objective", "be"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let weights = report["weights"].as_array().unwrap();
    assert!((weights[1].as_f64().unwrap() - 0.75).abs() < 1e-9);
    assert!(report["bound_report"].is_object());
}

#[test]
fn invalid_parameters_exit_with_two() {
    for args in [
        vec!["solve", "--env", "nowhere"],
        vec!["solve", "--env", "random_walk:5", "--objective", "ve", "--lambda", "0.5"],
        vec!["run", "--env", "random_walk:5", "--alpha", "-1"],
        vec!["control", "--tau", "-1"],
    ] {
        let out = offpolicy(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
}

#[test]
fn undiscounted_cycle_exits_with_three() {
    let path = scratch("undiscounted.json");
    let doc = serde_json::json!({
        "n_states": 2,
        "n_actions": 1,
        "P": [[[0.0, 1.0]], [[1.0, 0.0]]],
        "r": [[[1.0, 1.0]], [[1.0, 1.0]]],
        "gamma": [[[1.0, 1.0]], [[1.0, 1.0]]],
        "start": [1.0, 0.0]
    });
    std::fs::write(&path, doc.to_string()).unwrap();
    let out = offpolicy(&["solve", "--env", path.to_str().unwrap(), "--features", "tabular"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_csv_is_byte_identical_across_thread_counts() {
    let args = |threads: &str, file: &str| {
        let path = scratch(file);
        let out = offpolicy(&[
            "run",
            "--env",
            "random_walk:19",
            "--features",
            "agg:2",
            "--agent",
            "tdrc",
            "--alpha",
            "0.05",
            "--runs",
            "4",
            "--steps",
            "2000",
            "--record-every",
            "500",
            "--seed",
            "11",
            "--threads",
            threads,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(path).unwrap()
    };
    let one = args("1", "run_1.csv");
    let four = args("4", "run_4.csv");
    assert_eq!(one, four);
    let text = String::from_utf8(one).unwrap();
    assert!(text.starts_with("run,step,metric,value\n"));
    assert!(!text.contains('\r'));
    // Four runs, five checkpoints each, two metrics.
    assert_eq!(text.lines().count(), 1 + 4 * 5 * 2);
}

#[test]
fn seeds_change_sampled_output() {
    let run = |seed: &str| {
        stdout(&offpolicy(&[
            "run",
            "--env",
            "random_walk:5",
            "--steps",
            "500",
            "--record-every",
            "250",
            "--seed",
            seed,
        ]))
    };
    assert_eq!(run("3"), run("3"));
    assert_ne!(run("3"), run("4"));
}

#[test]
fn config_file_supplies_parameters_and_flags_override() {
    let path = scratch("solve.json");
    std::fs::write(&path, r#"{"env": "aliased", "objective": "be"}"#).unwrap();
    let from_file = stdout(&offpolicy(&["solve", "--config", path.to_str().unwrap()]));
    let report: serde_json::Value = serde_json::from_str(&from_file).unwrap();
    assert!((report["weights"][1].as_f64().unwrap() - 0.75).abs() < 1e-9);
    let overridden = stdout(&offpolicy(&["solve", "--config", path.to_str().unwrap(), "--objective", "td"]));
    let report: serde_json::Value = serde_json::from_str(&overridden).unwrap();
    assert!((report["weights"][1].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn fixed_points_write_grid_and_standard_errors() {
    let path = scratch("fp.csv");
    let out = offpolicy(&[
        "fixed-points",
        "--representations",
        "agg:2",
        "--reps",
        "20",
        "--seed",
        "2",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let grid = std::fs::read_to_string(&path).unwrap();
    assert!(grid.starts_with("representation,objective,weighting,eval_weighting,value,normalized\n"));
    // Two objectives, three weightings, two evaluation weightings, two summary rows.
    assert_eq!(grid.lines().count(), 1 + 12 + 2);
    let se = std::fs::read_to_string(scratch("fp_se.csv")).unwrap();
    assert!(se.starts_with("representation,objective,weighting,eval_weighting,n,se_value,n_normalized,se_normalized\n"));
}

#[test]
fn counterexample_tables_use_the_long_format() {
    let out = offpolicy(&["counterexample", "kolter", "--points", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("x,series,value\n"));
    assert!(text.lines().count() > 5);
}
