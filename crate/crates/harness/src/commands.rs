//! Subcommands. Each reads the configuration, writes its artifacts under the
//! output directory and returns the paths it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use crop_core::adversary::{learning_curves, ThresholdDistribution, ThresholdSearch};
use crop_core::budget::{
    budget_to_optimal_pairs, check_fragment_bounds, expected_trajectories_exact, expected_trajectories_mc,
    fragment_samples, BudgetModel, MAX_EXACT_HORIZON,
};
use crop_core::crop::{crop_act, CropConfig, CropPolicy, CropVariant};
use crop_core::loss::{loss_bound_report, LossReport, EXPECTATION_BASIS};
use crop_core::mdp::FiniteMdp;
use crop_core::rng::{derive_seed, seeded};
use crop_core::solver::{
    expected_return, greedy_policy, q_learning, value_iteration, QLearningConfig, QTable, VTable,
};
use crop_core::stats::MeanEstimate;
use crop_core::textfmt;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, SolverSpec};
use crate::schema::{self, Schema};
use crate::HarnessError;

pub const MDP_FILE: &str = "mdp.txt";
pub const QTABLE_FILE: &str = "qtable.txt";
pub const VTABLE_FILE: &str = "vtable.txt";
pub const REPORT_DIR: &str = "report";

// seed streams under the base seed
const STREAM_SOLVE: u64 = 1;
const STREAM_CROP: u64 = 2;
const STREAM_ATTACK: u64 = 3;
const STREAM_BUDGET: u64 = 4;
const STREAM_FRAGMENT: u64 = 5;

fn num(x: f64) -> String {
    format!("{x}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_text(path: PathBuf, text: &str) -> Result<PathBuf, HarnessError> {
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

/// Write `rows` (without the leading schema tag) under `schema`.
fn write_csv(dir: &Path, schema: &Schema, rows: &[Vec<String>]) -> Result<PathBuf, HarnessError> {
    let path = dir.join(schema.file);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(schema.columns)?;
    for row in rows {
        debug_assert_eq!(row.len() + 1, schema.columns.len(), "{}", schema.file);
        w.write_record(std::iter::once(schema.tag).chain(row.iter().map(String::as_str)))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

/// Read a CSV written under `schema`, checking its header.
pub fn read_csv(dir: &Path, schema: &Schema) -> Result<Vec<csv::StringRecord>, HarnessError> {
    let path = dir.join(schema.file);
    if !path.is_file() {
        return Err(HarnessError::MissingArtifact(path));
    }
    let mut r = csv::Reader::from_path(&path)?;
    let header = r.headers()?.clone();
    if header.iter().ne(schema.columns.iter().copied()) {
        return Err(HarnessError::Artifact { path, message: format!("header does not match schema {}", schema.tag) });
    }
    let rows = r.records().collect::<Result<Vec<_>, _>>()?;
    if let Some(bad) = rows.iter().find(|row| row.get(0) != Some(schema.tag)) {
        return Err(HarnessError::Artifact { path, message: format!("row tagged {:?}, expected {}", bad.get(0), schema.tag) });
    }
    Ok(rows)
}

/// Run `f` on a dedicated pool of `jobs` workers, or on the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

// ── solve ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Tables {
    pub mdp: FiniteMdp,
    pub q: QTable,
    pub v: VTable,
}

#[derive(Debug, Clone)]
pub struct SolveSummary {
    pub method: &'static str,
    pub iterations: usize,
    pub final_residual: Option<f64>,
    pub g_star: f64,
}

/// Build the configured MDP and solve it.
pub fn solve_tables(cfg: &ExperimentConfig) -> Result<(Tables, SolveSummary), HarnessError> {
    let mdp = cfg.mdp.build()?;
    let (q, v, method, iterations, final_residual) = match &cfg.solver {
        SolverSpec::ValueIteration { tol, max_iters } => {
            let sol = value_iteration(&mdp, *tol, *max_iters)?;
            let residual = sol.residuals.last().copied();
            (sol.q, sol.v, "value_iteration", sol.iterations, residual)
        }
        SolverSpec::QLearning { episodes, horizon, lr, explore } => {
            let q = q_learning(
                &mdp,
                &QLearningConfig {
                    episodes: *episodes,
                    horizon: *horizon,
                    lr: *lr,
                    explore: *explore,
                    seed: derive_seed(cfg.seed, &[STREAM_SOLVE]),
                },
            )?;
            let v = q.state_values();
            (q, v, "q_learning", *episodes, None)
        }
    };
    let g_star = expected_return(&mdp, &greedy_policy(&q))?;
    Ok((Tables { mdp, q, v }, SolveSummary { method, iterations, final_residual, g_star }))
}

pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, HarnessError> {
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    let (t, summary) = solve_tables(cfg)?;
    let row = vec![
        summary.method.to_string(),
        t.mdp.n_states().to_string(),
        t.mdp.n_actions().to_string(),
        num(t.mdp.gamma()),
        summary.iterations.to_string(),
        summary.final_residual.map(num).unwrap_or_default(),
        num(summary.g_star),
    ];
    Ok(vec![
        write_text(dir.join(MDP_FILE), &textfmt::write_mdp(&t.mdp))?,
        write_text(dir.join(QTABLE_FILE), &textfmt::write_qtable(&t.q))?,
        write_text(dir.join(VTABLE_FILE), &textfmt::write_vtable(&t.v))?,
        write_csv(dir, &schema::SOLVE, &[row])?,
    ])
}

fn read_artifact<T>(path: PathBuf, parse: impl Fn(&str) -> Result<T, textfmt::TextError>) -> Result<T, HarnessError> {
    if !path.is_file() {
        return Err(HarnessError::MissingArtifact(path));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    parse(&text).map_err(|source| HarnessError::Text { path, source })
}

/// Load the tables written by [`cmd_solve`].
pub fn load_tables(dir: &Path) -> Result<Tables, HarnessError> {
    let mdp = read_artifact(dir.join(MDP_FILE), textfmt::read_mdp)?;
    let q = read_artifact(dir.join(QTABLE_FILE), textfmt::read_qtable)?;
    let v = read_artifact(dir.join(VTABLE_FILE), textfmt::read_vtable)?;
    if q.n_states() != mdp.n_states() || q.n_actions() != mdp.n_actions() || v.len() != mdp.n_states() {
        return Err(HarnessError::Artifact { path: dir.to_path_buf(), message: "tables do not match the MDP".into() });
    }
    Ok(Tables { mdp, q, v })
}

// ── crop-eval ────────────────────────────────────────────────────────────

/// Grid cells in output order: variant, then δ, then ρ.
pub fn grid(deltas: &[f64], rhos: &[f64], variants: &[CropVariant]) -> Result<Vec<CropConfig>, HarnessError> {
    let mut cells = Vec::with_capacity(deltas.len() * rhos.len() * variants.len());
    for &variant in variants {
        for &delta in deltas {
            for &rho in rhos {
                cells.push(CropConfig::new(delta, rho, variant)?);
            }
        }
    }
    Ok(cells)
}

pub fn experiment_id(c: &CropConfig) -> String {
    format!("{}-d{}-r{}", c.variant, c.delta, c.rho)
}

/// Test-time timestep and diversion counts of `f` over `episodes` episodes.
/// Episode `e` uses `derive_seed(seed, [e])`.
pub fn test_time_counts(mdp: &FiniteMdp, crop: &CropPolicy, episodes: usize, horizon: usize, seed: u64) -> (u64, u64) {
    let (mut steps, mut diversions) = (0u64, 0u64);
    for e in 0..episodes as u64 {
        let mut rng = seeded(derive_seed(seed, &[e]));
        let mut state = mdp.sample_start(&mut rng);
        let mut prev = None;
        for _ in 0..horizon {
            if mdp.is_terminal(state) {
                break;
            }
            let (a, diverted) = crop_act(state, prev, crop, &mut rng);
            steps += 1;
            diversions += u64::from(diverted);
            prev = Some(state);
            state = mdp.sample_next(state, a, &mut rng);
        }
    }
    (steps, diversions)
}

#[derive(Debug, Clone)]
pub struct CropEvalRow {
    pub config: CropConfig,
    pub episodes: usize,
    pub total_timesteps: u64,
    pub succ_diversions: u64,
    pub report: LossReport,
}

impl CropEvalRow {
    /// Inferred analogue of the expected optimal-action count: δ times the
    /// number of test-time steps.
    pub fn delta_times_t(&self) -> f64 {
        self.config.delta * self.total_timesteps as f64
    }

    fn cells(&self) -> Vec<String> {
        let r = &self.report;
        let ratio = if r.g_star > 0.0 { r.g_f / r.g_star } else { 1.0 };
        vec![
            experiment_id(&self.config),
            num(self.config.delta),
            num(self.config.rho),
            self.config.variant.to_string(),
            self.episodes.to_string(),
            self.total_timesteps.to_string(),
            self.succ_diversions.to_string(),
            num(self.delta_times_t()),
            num(r.g_star),
            num(r.g_f),
            num(ratio),
            num(r.empirical_gap),
            num(r.per_step_gap_max),
            num(r.bound_per_step),
            r.horizon_n.to_string(),
            num(r.e_l_tight),
            num(r.e_l_bound),
            num(r.rollout_gap_sum),
            num(r.max_proxy_sum),
            r.per_step_ok.to_string(),
            r.rollout_sum_ok.to_string(),
            r.max_proxy_ok.to_string(),
            r.bound_applicable.to_string(),
            EXPECTATION_BASIS.to_string(),
        ]
    }
}

pub fn crop_eval_rows(cfg: &ExperimentConfig, tables: &Tables) -> Result<Vec<CropEvalRow>, HarnessError> {
    let cells = grid(&cfg.crop.deltas, &cfg.crop.rhos, &cfg.crop.variants)?;
    cells
        .par_iter()
        .enumerate()
        .map(|(i, &config)| {
            let seed = derive_seed(cfg.seed, &[STREAM_CROP, i as u64]);
            let crop = CropPolicy::new(config, tables.q.clone(), tables.v.clone())?;
            let report = loss_bound_report(&tables.mdp, &crop, cfg.crop.loss_horizon, derive_seed(seed, &[0]))?;
            let (total_timesteps, succ_diversions) =
                test_time_counts(&tables.mdp, &crop, cfg.crop.episodes, cfg.crop.horizon, derive_seed(seed, &[1]));
            Ok(CropEvalRow { config, episodes: cfg.crop.episodes, total_timesteps, succ_diversions, report })
        })
        .collect()
}

pub fn cmd_crop_eval(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, HarnessError> {
    let tables = load_tables(&cfg.output_dir)?;
    let rows: Vec<Vec<String>> = crop_eval_rows(cfg, &tables)?.iter().map(CropEvalRow::cells).collect();
    Ok(vec![write_csv(&cfg.output_dir, &schema::CROP_EVAL, &rows)?])
}

// ── attack ───────────────────────────────────────────────────────────────

pub fn threshold_search(cfg: &ExperimentConfig) -> ThresholdSearch {
    let a = &cfg.adversary;
    ThresholdSearch {
        attacker: a.attacker,
        threshold: a.threshold,
        batch: a.batch,
        max_samples: a.max_samples,
        trials: a.trials,
        horizon: a.horizon,
        smoothing: a.smoothing,
        deployment: a.deployment,
        // shared by every cell so cells are paired trial by trial
        seed: derive_seed(cfg.seed, &[STREAM_ATTACK]),
    }
}

pub fn attack_results(cfg: &ExperimentConfig, tables: &Tables) -> Result<Vec<(CropConfig, ThresholdDistribution)>, HarnessError> {
    let a = &cfg.adversary;
    let search = threshold_search(cfg);
    grid(&a.deltas, &a.rhos, &a.variants)?
        .into_par_iter()
        .map(|config| {
            let expert = CropPolicy::new(config, tables.q.clone(), tables.v.clone())?;
            Ok((config, learning_curves(&tables.mdp, &expert, &search)?))
        })
        .collect()
}

pub fn cmd_attack(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, HarnessError> {
    let tables = load_tables(&cfg.output_dir)?;
    let results = attack_results(cfg, &tables)?;
    let a = &cfg.adversary;
    let (mut trials, mut curves, mut cells) = (Vec::new(), Vec::new(), Vec::new());
    for (config, dist) in &results {
        let id = experiment_id(config);
        let head = || vec![id.clone(), num(config.delta), num(config.rho), config.variant.to_string()];
        for (i, t) in dist.trials.iter().enumerate() {
            let f = &t.final_fidelity;
            let mut row = head();
            row.extend([
                a.attacker.to_string(),
                a.deployment.to_string(),
                i.to_string(),
                num(a.threshold),
                t.samples.to_string(),
                t.censored.to_string(),
                f.samples_used.to_string(),
                num(f.action_match_rate),
                num(f.return_ratio),
                num(f.tv_distance),
            ]);
            trials.push(row);
        }
        let points = dist.trials.first().map_or(0, |t| t.curve.len());
        let mut final_mean = f64::NAN;
        for j in 0..points {
            let ratios: Vec<f64> = dist.trials.iter().map(|t| t.curve[j].1).collect();
            let est = MeanEstimate::from_samples(&ratios);
            final_mean = est.mean;
            let mut row = head();
            row.extend([dist.trials[0].curve[j].0.to_string(), num(est.mean), num(est.stderr), est.n.to_string()]);
            curves.push(row);
        }
        let mut row = head();
        row.extend([
            dist.trials.len().to_string(),
            dist.censored_count().to_string(),
            num(dist.median()),
            num(final_mean),
        ]);
        cells.push(row);
    }
    let dir = &cfg.output_dir;
    Ok(vec![
        write_csv(dir, &schema::ATTACK_TRIALS, &trials)?,
        write_csv(dir, &schema::ATTACK_CURVES, &curves)?,
        write_csv(dir, &schema::ATTACK_CELLS, &cells)?,
    ])
}

// ── budget ───────────────────────────────────────────────────────────────

pub fn cmd_budget(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, HarnessError> {
    let b = &cfg.budget;
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    let cells: Vec<(usize, f64)> = b.horizons.iter().flat_map(|&t| b.deltas.iter().map(move |&d| (t, d))).collect();
    let rows = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(t, delta))| {
            let model = BudgetModel::collection(t, delta)?;
            let mc = expected_trajectories_mc(&model, b.mc_trials, derive_seed(cfg.seed, &[STREAM_BUDGET, i as u64]))?;
            let exact = if t <= MAX_EXACT_HORIZON { Some(expected_trajectories_exact(&model)?) } else { None };
            let exact_ok = exact.map(|e| (e - mc.expected_pulls_mc).abs() <= 3.0 * mc.mc_stderr);
            Ok(vec![
                t.to_string(),
                num(delta),
                num(mc.expected_pulls_analytic),
                num(mc.expected_pulls_mc),
                num(mc.mc_stderr),
                mc.trials.to_string(),
                exact.map(num).unwrap_or_default(),
                mc.agrees(3.0).to_string(),
                exact_ok.map(|x| x.to_string()).unwrap_or_default(),
            ])
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let mut pairs = Vec::new();
    for &delta in &b.deltas {
        for &budget in &b.budgets {
            pairs.push(vec![num(delta), num(budget), budget_to_optimal_pairs(delta, budget)?.to_string()]);
        }
    }

    let (tables, _) = solve_tables(cfg)?;
    let expert = CropPolicy::new(
        CropConfig::new(b.fragment_delta, b.fragment_rho, CropVariant::QDiff)?,
        tables.q,
        tables.v,
    )?;
    let samples = fragment_samples(
        &tables.mdp,
        &expert,
        b.fragment_horizon,
        b.fragment_trials,
        derive_seed(cfg.seed, &[STREAM_FRAGMENT]),
    )?;
    let sizes: Vec<usize> = samples.iter().map(|s| s.0).collect();
    let k = MeanEstimate::from_samples(&sizes.iter().map(|&x| x as f64).collect::<Vec<_>>());
    let bounds: Vec<Vec<String>> = check_fragment_bounds(&sizes, b.fragment_horizon, b.fragment_points)?
        .iter()
        .map(|c| {
            vec![
                b.fragment_horizon.to_string(),
                num(k.mean),
                num(k.stderr),
                num(c.t),
                num(c.lower),
                num(c.upper),
                num(c.p_below),
                num(c.p_at_most),
                c.holds().to_string(),
            ]
        })
        .collect();

    Ok(vec![
        write_csv(dir, &schema::BUDGET, &rows)?,
        write_csv(dir, &schema::BUDGET_PAIRS, &pairs)?,
        write_csv(dir, &schema::BUDGET_BOUNDS, &bounds)?,
    ])
}

// ── report ───────────────────────────────────────────────────────────────

fn field<'a>(row: &'a csv::StringRecord, schema: &Schema, name: &str) -> &'a str {
    let i = schema.columns.iter().position(|c| *c == name).expect("column in schema");
    row.get(i).unwrap_or("")
}

/// Emit gnuplot-ready data files from the CSVs in `out_dir`.
pub fn cmd_report(out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let crop = read_csv(out_dir, &schema::CROP_EVAL)?;
    let curves = read_csv(out_dir, &schema::ATTACK_CURVES)?;
    let budget = read_csv(out_dir, &schema::BUDGET)?;
    let dir = out_dir.join(REPORT_DIR);
    ensure_dir(&dir)?;
    let mut written = Vec::new();

    // learning curves: one gnuplot index block per cell
    let s = &schema::ATTACK_CURVES;
    let mut text = String::from("# samples mean_return_ratio stderr\n");
    let mut current = None;
    for row in &curves {
        let id = field(row, s, "experiment_id");
        if current != Some(id) {
            if current.is_some() {
                text.push_str("\n\n");
            }
            text.push_str(&format!("# {id}\n"));
            current = Some(id);
        }
        text.push_str(&format!(
            "{} {} {}\n",
            field(row, s, "samples"),
            field(row, s, "mean_return_ratio"),
            field(row, s, "stderr")
        ));
    }
    written.push(write_text(dir.join("learning_curves.dat"), &text)?);

    // test-time bars
    let s = &schema::CROP_EVAL;
    let mut text = String::from("# experiment_id succ_diversions delta_times_t_inferred total_timesteps\n");
    for row in &crop {
        text.push_str(&format!(
            "{} {} {} {}\n",
            field(row, s, "experiment_id"),
            field(row, s, "succ_diversions"),
            field(row, s, "delta_times_t_inferred"),
            field(row, s, "total_timesteps")
        ));
    }
    written.push(write_text(dir.join("test_time.dat"), &text)?);

    // parameter-search heatmaps, one file per variant, blank line between δ rows
    let mut variants: Vec<&str> = Vec::new();
    for row in &crop {
        let v = field(row, s, "variant");
        if !variants.contains(&v) {
            variants.push(v);
        }
    }
    for v in variants {
        let mut text = String::from("# delta rho return_ratio\n");
        let mut last_delta = None;
        for row in crop.iter().filter(|r| field(r, s, "variant") == v) {
            let d = field(row, s, "delta");
            if last_delta.is_some_and(|x| x != d) {
                text.push('\n');
            }
            last_delta = Some(d);
            text.push_str(&format!("{} {} {}\n", d, field(row, s, "rho"), field(row, s, "return_ratio")));
        }
        written.push(write_text(dir.join(format!("param_search_{v}.dat")), &text)?);
    }

    let s = &schema::BUDGET;
    let mut text = String::from("# T delta analytic mc_mean mc_stderr exact\n");
    for row in &budget {
        let exact = field(row, s, "exact");
        text.push_str(&format!(
            "{} {} {} {} {} {}\n",
            field(row, s, "T"),
            field(row, s, "delta"),
            field(row, s, "analytic"),
            field(row, s, "mc_mean"),
            field(row, s, "mc_stderr"),
            if exact.is_empty() { "NaN" } else { exact }
        ));
    }
    written.push(write_text(dir.join("budget.dat"), &text)?);
    Ok(written)
}

// ── sweep ────────────────────────────────────────────────────────────────

/// solve, crop-eval, attack, budget and report in sequence.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = cmd_solve(cfg)?;
    written.extend(cmd_crop_eval(cfg)?);
    written.extend(cmd_attack(cfg)?);
    written.extend(cmd_budget(cfg)?);
    written.extend(cmd_report(&cfg.output_dir)?);
    Ok(written)
}
