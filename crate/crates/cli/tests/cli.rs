//! End-to-end tests of the command-line surface: exit codes, determinism,
//! file round trips, and the simulate -> fit recovery loop.

use std::path::Path;
use std::process::{Command, Output};

fn votedyn(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_votedyn"));
    cmd.args(args);
    cmd.env_remove("VOTEDYN_CONFIG");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn simulate_zero_interest_not_promoted() {
    let out = votedyn(&["simulate", "--r", "0", "--s", "10"], &[]);
    assert_eq!(code(&out), 0);
    assert!(stderr_of(&out).contains("not promoted"));
    assert!(stderr_of(&out).contains("final_votes = 1.00000"));
    let table = stdout_of(&out);
    assert!(table.starts_with("story_id,t_minutes,votes,"));
    for line in table.lines().skip(1) {
        assert_eq!(line.split(',').nth(2), Some("1"));
    }
}

#[test]
fn simulate_zero_horizon_single_row() {
    let out = votedyn(&["simulate", "--r", "0.4", "--s", "9", "--t-end", "0"], &[]);
    assert_eq!(code(&out), 0);
    let table = stdout_of(&out);
    assert_eq!(table.lines().count(), 2, "header plus one row:\n{table}");
    assert!(table.lines().nth(1).unwrap().starts_with("story,0,1,"));
}

#[test]
fn simulate_reference_story_summary() {
    let out = votedyn(&["simulate", "--r", "0.51", "--s", "5"], &[]);
    assert_eq!(code(&out), 0);
    let err = stderr_of(&out);
    let final_votes: f64 = err
        .lines()
        .find(|l| l.starts_with("final_votes"))
        .and_then(|l| l.split_whitespace().nth(2))
        .and_then(|v| v.parse().ok())
        .expect("summary line");
    assert!(
        (final_votes / 2229.0 - 1.0).abs() < 0.2,
        "final votes {final_votes}"
    );
    assert!(err.contains("promoted_at_minutes"));
}

#[test]
fn simulate_rejects_bad_interest() {
    let out = votedyn(&["simulate", "--r", "1.5", "--s", "4"], &[]);
    assert_eq!(code(&out), 2);
    assert!(stderr_of(&out).contains("interest"));
}

#[test]
fn mc_deterministic_and_validates_runs() {
    let args = [
        "mc", "--r", "0.3", "--s", "20", "--runs", "5", "--seed", "7", "--t-end", "360",
    ];
    let first = votedyn(&args, &[]);
    let second = votedyn(&args, &[]);
    assert_eq!(code(&first), 0);
    assert_eq!(stdout_of(&first), stdout_of(&second));
    assert!(stdout_of(&first).starts_with("t_minutes,mean_votes,var_votes,promoted_fraction"));

    let bad = votedyn(&["mc", "--r", "0.3", "--s", "20", "--runs", "0"], &[]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn fit_recovers_simulated_interest() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("obs.csv");
    let out = votedyn(
        &[
            "simulate",
            "--r",
            "0.3",
            "--s",
            "40",
            "--obs-out",
            obs.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&out), 0);

    let fit = votedyn(
        &["fit", "--input", obs.to_str().unwrap(), "--default-s", "40"],
        &[],
    );
    assert_eq!(code(&fit), 0);
    let table = stdout_of(&fit);
    let row = table.lines().nth(1).expect("one story fitted");
    let r_hat: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((r_hat - 0.3).abs() < 1e-3, "recovered {r_hat}");
}

#[test]
fn fit_rejects_malformed_observations_naming_story_and_row() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("bad.csv");
    std::fs::write(
        &obs,
        "story_id,t_minutes,votes\ngood_one,60,2\ngood_one,120,3\nbad_one,60,5\nbad_one,120,3\n",
    )
    .unwrap();
    let out = votedyn(
        &["fit", "--input", obs.to_str().unwrap(), "--default-s", "5"],
        &[],
    );
    assert_eq!(code(&out), 2);
    let err = stderr_of(&out);
    assert!(err.contains("bad_one"), "stderr: {err}");
    assert!(err.contains("row 1"), "stderr: {err}");

    let missing_fans = votedyn(&["fit", "--input", obs.to_str().unwrap()], &[]);
    assert_eq!(code(&missing_fans), 2);
    assert!(stderr_of(&missing_fans).contains("--fans"));
}

#[test]
fn boundary_single_step_and_monotone() {
    let single = votedyn(&["boundary", "--s-min", "40", "--s-max", "40", "--steps", "1"], &[]);
    assert_eq!(code(&single), 0);
    let table = stdout_of(&single);
    assert_eq!(table.lines().count(), 2);
    assert!(table.lines().nth(1).unwrap().starts_with("40,"));

    let sweep = votedyn(&["boundary", "--s-min", "0", "--s-max", "80", "--steps", "3"], &[]);
    assert_eq!(code(&sweep), 0);
    let values: Vec<f64> = stdout_of(&sweep)
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 3);
    assert!(values[0] >= values[1] && values[1] >= values[2]);
}

#[test]
fn synth_deterministic_and_feeds_fit_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let obs_a = dir.path().join("a_obs.csv");
    let truth_a = dir.path().join("a_truth.csv");
    let obs_b = dir.path().join("b_obs.csv");
    let truth_b = dir.path().join("b_truth.csv");
    for (obs, truth) in [(&obs_a, &truth_a), (&obs_b, &truth_b)] {
        let out = votedyn(
            &[
                "synth", "--n", "10", "--seed", "11", "--t-end", "720",
                "--out", obs.to_str().unwrap(), "--truth", truth.to_str().unwrap(),
            ],
            &[],
        );
        assert_eq!(code(&out), 0);
    }
    assert_eq!(
        std::fs::read(&obs_a).unwrap(),
        std::fs::read(&obs_b).unwrap()
    );
    assert_eq!(
        std::fs::read(&truth_a).unwrap(),
        std::fs::read(&truth_b).unwrap()
    );

    let fit = votedyn(
        &[
            "fit",
            "--input",
            obs_a.to_str().unwrap(),
            "--fans",
            truth_a.to_str().unwrap(),
            "--early",
            "4",
        ],
        &[],
    );
    assert_eq!(code(&fit), 0);
    assert_eq!(stdout_of(&fit).lines().count(), 11, "header plus ten fits");
    assert!(stderr_of(&fit).contains("early_prediction_slope"));

    let stats = votedyn(
        &["stats", "--input", truth_a.to_str().unwrap(), "--bootstrap", "50", "--perm", "200"],
        &[],
    );
    assert_eq!(code(&stats), 0);
    let report = stdout_of(&stats);
    for key in ["mu_ln", "sigma_ln", "ks_p_value", "fans_interest_pearson"] {
        assert!(report.contains(key), "report missing {key}:\n{report}");
    }
}

#[test]
fn config_file_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("site.conf");
    std::fs::write(&config, "visit_rate = 20\nseed = 9\n").unwrap();
    let dump = dir.path().join("effective.conf");
    let out = votedyn(
        &[
            "simulate", "--r", "0", "--s", "1", "--t-end", "0",
            "--config", config.to_str().unwrap(),
            "--dump-config", dump.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&out), 0);
    let dumped = std::fs::read_to_string(&dump).unwrap();
    assert!(dumped.contains("visit_rate = 20"));
    assert!(dumped.contains("seed = 9"));
    // The effective config is echoed on stderr too.
    assert!(stderr_of(&out).contains("visit_rate = 20"));

    // The same config can come from the environment.
    let via_env = votedyn(
        &["simulate", "--r", "0", "--s", "1", "--t-end", "0"],
        &[("VOTEDYN_CONFIG", config.to_str().unwrap())],
    );
    assert_eq!(code(&via_env), 0);
    assert!(stderr_of(&via_env).contains("visit_rate = 20"));

    std::fs::write(&config, "bogus_key = 3\n").unwrap();
    let bad = votedyn(
        &[
            "simulate", "--r", "0", "--s", "1",
            "--config", config.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&bad), 2);
    assert!(stderr_of(&bad).contains("bogus_key"));
}

#[test]
fn outputs_written_under_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("site.conf");
    std::fs::write(
        &config,
        format!("out_dir = {}\n", dir.path().display()),
    )
    .unwrap();
    let out = votedyn(
        &[
            "simulate", "--r", "0", "--s", "1", "--t-end", "0",
            "--config", config.to_str().unwrap(),
            "--out", "traj.csv",
        ],
        &[],
    );
    assert_eq!(code(&out), 0);
    assert!(Path::new(&dir.path().join("traj.csv")).exists());
}
