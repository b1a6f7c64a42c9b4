//! End-to-end behaviour of the harness commands and the CLI front end.

use std::fs;
use std::path::Path;

use crate::cli::run_cli;
use crate::commands::{
    cmd_attack, cmd_budget, cmd_crop_eval, cmd_report, cmd_solve, load_tables, read_csv, solve_tables,
};
use crate::schema::{self, Schema};
use crate::ExperimentConfig;

const SMALL: &str = "\
[mdp]
builder = gridworld
gamma = 0.9

[crop]
delta = 0, 0.5, 1
rho = 0, 0.1
variant = qdiff, adiff
episodes = 10
horizon = 100

[adversary]
delta = 0.5, 1
rho = 0.1
variant = qdiff
trials = 12
max_samples = 30
threshold = 0.95

[budget]
horizon = 1, 2
delta = 0.5
mc_trials = 20000
fragment_trials = 2000

[seeds]
base = 5
";

fn config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(SMALL).unwrap();
    cfg.output_dir = dir.to_path_buf();
    cfg
}

fn column(rows: &[csv::StringRecord], s: &Schema, name: &str) -> Vec<String> {
    let i = s.columns.iter().position(|c| *c == name).unwrap();
    rows.iter().map(|r| r[i].to_string()).collect()
}

fn croplab(args: &[&str]) -> i32 {
    run_cli(std::iter::once("croplab").chain(args.iter().copied()))
}

#[test]
fn solve_is_deterministic_and_round_trips() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_solve(&config(a.path())).unwrap();
    cmd_solve(&config(b.path())).unwrap();
    for f in ["mdp.txt", "qtable.txt", "vtable.txt", "solve.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let loaded = load_tables(a.path()).unwrap();
    let (fresh, _) = solve_tables(&config(a.path())).unwrap();
    assert_eq!(loaded.mdp, fresh.mdp);
    assert_eq!(loaded.q, fresh.q);
    assert_eq!(loaded.v, fresh.v);
}

#[test]
fn crop_eval_rows_respect_table_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    cmd_solve(&cfg).unwrap();
    cmd_crop_eval(&cfg).unwrap();
    let s = &schema::CROP_EVAL;
    let rows = read_csv(dir.path(), s).unwrap();
    assert_eq!(rows.len(), 3 * 2 * 2);
    let get = |name| column(&rows, s, name);
    let (deltas, rhos, variants) = (get("delta"), get("rho"), get("variant"));
    let (succ, total) = (get("succ_diversions"), get("total_timesteps"));
    for i in 0..rows.len() {
        let delta: f64 = deltas[i].parse().unwrap();
        let succ: f64 = succ[i].parse().unwrap();
        let total: f64 = total[i].parse().unwrap();
        assert!(succ <= total);
        if delta == 1.0 || (variants[i] == "qdiff" && rhos[i] == "0") {
            assert_eq!(succ, 0.0, "row {i}");
        }
        // each step diverts with probability at most 1 − δ
        let bound = (1.0 - delta) * total + 4.0 * (total * delta * (1.0 - delta)).sqrt();
        assert!(succ <= bound + 1e-9, "row {i}: {succ} > {bound}");
        if variants[i] == "qdiff" {
            assert_eq!(get("per_step_ok")[i], "true");
            assert_eq!(get("rollout_sum_ok")[i], "true");
        }
    }
}

#[test]
fn budget_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    cmd_budget(&cfg).unwrap();
    let s = &schema::BUDGET;
    let rows = read_csv(dir.path(), s).unwrap();
    assert_eq!(column(&rows, s, "analytic")[0], "2");
    assert_eq!(column(&rows, s, "T"), vec!["1", "2"]);
    assert!(column(&rows, s, "analytic_within_3se").iter().all(|x| x == "true"));
    let b = &schema::BUDGET_BOUNDS;
    let bounds = read_csv(dir.path(), b).unwrap();
    for name in ["lower", "upper"] {
        assert!(column(&bounds, b, name).iter().all(|x| (0.0..=1.0).contains(&x.parse::<f64>().unwrap())));
    }
    assert!(column(&bounds, b, "holds").iter().all(|x| x == "true"));
    let p = &schema::BUDGET_PAIRS;
    assert_eq!(column(&read_csv(dir.path(), p).unwrap(), p, "optimal_pairs"), vec!["10"]);
}

#[test]
fn attack_curves_and_censoring() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    cmd_solve(&cfg).unwrap();
    cmd_attack(&cfg).unwrap();
    let first: Vec<Vec<u8>> = ["attack_trials.csv", "attack_curves.csv", "attack_cells.csv"]
        .iter()
        .map(|f| fs::read(dir.path().join(f)).unwrap())
        .collect();
    cmd_attack(&cfg).unwrap();
    for (i, f) in ["attack_trials.csv", "attack_curves.csv", "attack_cells.csv"].iter().enumerate() {
        assert_eq!(first[i], fs::read(dir.path().join(f)).unwrap());
    }

    let t = &schema::ATTACK_TRIALS;
    let trials = read_csv(dir.path(), t).unwrap();
    assert_eq!(trials.len(), 2 * 12);
    let censored = column(&trials, t, "censored");
    let samples = column(&trials, t, "samples_to_threshold");
    for (c, s) in censored.iter().zip(&samples) {
        if c == "true" {
            assert_eq!(s, "30");
        }
    }
    let c = &schema::ATTACK_CELLS;
    let cells = read_csv(dir.path(), c).unwrap();
    let finals: Vec<f64> = column(&cells, c, "final_mean_return_ratio").iter().map(|x| x.parse().unwrap()).collect();
    // rows are δ = 0.5 then δ = 1
    assert!(finals[1] > finals[0], "{finals:?}");
    assert!(column(&cells, c, "censored_trials")[0].parse::<usize>().unwrap() > 0);
}

#[test]
fn report_emits_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(cmd_report(dir.path()), Err(crate::HarnessError::MissingArtifact(_))));
    let cfg = config(dir.path());
    cmd_solve(&cfg).unwrap();
    cmd_crop_eval(&cfg).unwrap();
    cmd_attack(&cfg).unwrap();
    cmd_budget(&cfg).unwrap();
    let files = cmd_report(dir.path()).unwrap();
    assert_eq!(files.len(), 5);
    let curves = fs::read_to_string(dir.path().join("report/learning_curves.dat")).unwrap();
    assert_eq!(curves.matches("\n\n\n").count(), 1);
    let heat = fs::read_to_string(dir.path().join("report/param_search_qdiff.dat")).unwrap();
    assert_eq!(heat.lines().filter(|l| l.is_empty()).count(), 2);
}

#[test]
fn every_csv_header_matches_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    cmd_solve(&cfg).unwrap();
    cmd_crop_eval(&cfg).unwrap();
    cmd_attack(&cfg).unwrap();
    cmd_budget(&cfg).unwrap();
    for s in schema::ALL {
        let text = fs::read_to_string(dir.path().join(s.file)).unwrap();
        assert_eq!(text.lines().next().unwrap(), s.columns.join(","), "{}", s.file);
        assert!(read_csv(dir.path(), s).is_ok());
    }
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.ini");
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    fs::write(&cfg_path, SMALL.replace("gamma = 0.9", "gamma = 1.0")).unwrap();
    let cfg_s = cfg_path.to_str().unwrap();
    assert_eq!(croplab(&["solve", "--config", cfg_s, "--out", out_s]), 2);
    let err = crate::load_config(&cfg_path).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");

    assert_eq!(croplab(&["solve", "--config", "/nonexistent.ini"]), 2);

    fs::write(&cfg_path, SMALL).unwrap();
    assert_eq!(croplab(&["crop-eval", "--config", cfg_s, "--out", out_s]), 3);
    assert_eq!(croplab(&["report", "--out", out_s]), 3);
    assert_eq!(croplab(&["solve", "--config", cfg_s, "--out", out_s, "--jobs", "2"]), 0);
    assert!(out.join("qtable.txt").is_file());
    assert_eq!(croplab(&["bogus"]), 2);
    assert_eq!(croplab(&["crop-eval", "--config", cfg_s, "--out", out_s]), 0);
}

#[test]
fn seed_override_changes_sampled_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.ini");
    fs::write(&cfg_path, SMALL).unwrap();
    let cfg_s = cfg_path.to_str().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let out_s = out.to_str().unwrap().to_string();
        assert_eq!(croplab(&["budget", "--config", cfg_s, "--out", &out_s, "--seed", seed]), 0);
        fs::read(out.join("budget.csv")).unwrap()
    };
    assert_eq!(run("a", "1"), run("b", "1"));
    assert_ne!(run("a", "1"), run("c", "2"));
}
