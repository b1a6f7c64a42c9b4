//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line per criterion and exits non-zero if any failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crop_core::adversary::{samples_to_threshold, Deployment, ThresholdSearch};
use crop_core::budget::{
    budget_to_optimal_pairs, check_fragment_bounds, expected_trajectories_analytic, expected_trajectories_exact,
    expected_trajectories_mc, fragment_samples, markov_fragment_bounds, BudgetModel,
};
use crop_core::crop::{
    check_theorem1, crop_action_distribution, crop_stochastic_policy, CropConfig, CropPolicy, CropVariant,
};
use crop_core::loss::{expected_return_crop, loss_bound_report, per_step_gap, BOUND_TOL};
use crop_core::mdp::{build_chain, FiniteMdp, Gridworld};
use crop_core::rng::derive_seed;
use crop_core::solver::{
    evaluate_policy_exact, expected_return, greedy_policy, monte_carlo_return, q_learning, value_iteration,
    LrSchedule, QLearningConfig, QTable, Solution, StochasticPolicy, VTable,
};
use crop_core::stats::rank_sum_greater;
use crop_harness::commands::{cmd_sweep, test_time_counts, with_jobs};
use crop_harness::load_config;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn canonical() -> (FiniteMdp, Solution) {
    let mdp = Gridworld::canonical().build().unwrap();
    let sol = value_iteration(&mdp, 1e-12, 10_000).unwrap();
    (mdp, sol)
}

fn crop(q: &QTable, v: &VTable, delta: f64, rho: f64, variant: CropVariant) -> CropPolicy {
    CropPolicy::new(CropConfig::new(delta, rho, variant).unwrap(), q.clone(), v.clone()).unwrap()
}

const DELTAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const RHOS: [f64; 5] = [0.0, 0.01, 0.05, 0.1, 0.5];

/// δ = 1 and (qdiff, ρ = 0) reduce f to the greedy policy.
fn degeneracies() -> Outcome {
    let (mdp, sol) = canonical();
    let greedy = greedy_policy(&sol.q);
    let mut failures = Vec::new();
    let mut cases: Vec<CropPolicy> = RHOS.iter().map(|&r| crop(&sol.q, &sol.v, 1.0, r, CropVariant::QDiff)).collect();
    cases.extend(DELTAS.iter().map(|&d| crop(&sol.q, &sol.v, d, 0.0, CropVariant::QDiff)));
    for v in [CropVariant::ADiff, CropVariant::APlusDiff] {
        cases.extend(RHOS.iter().map(|&r| crop(&sol.q, &sol.v, 1.0, r, v)));
    }
    for (i, f) in cases.iter().enumerate() {
        let cfg = f.config();
        let equal = if cfg.variant == CropVariant::QDiff {
            crop_stochastic_policy(f).unwrap() == greedy
        } else {
            (0..mdp.n_states()).all(|s| {
                std::iter::once(None)
                    .chain((0..mdp.n_states()).map(Some))
                    .all(|prev| crop_action_distribution(s, prev, f) == greedy.row(s))
            })
        };
        let (_, succ) = test_time_counts(&mdp, f, 10, 100, derive_seed(1, &[i as u64]));
        if !equal || succ != 0 {
            failures.push(format!("{}(δ={}, ρ={}): equal={equal} succ={succ}", cfg.variant, cfg.delta, cfg.rho));
        }
    }
    outcome(failures.is_empty(), format!("{} configurations, failures: {:?}", cases.len(), failures))
}

/// Per-step gap and N-step sums within the loss bound over the sweep grid.
fn loss_bounds() -> Outcome {
    let (mdp, sol) = canonical();
    let n = 100;
    let mut violations = Vec::new();
    let mut checked = 0;
    for (i, &delta) in DELTAS.iter().enumerate() {
        for (j, &rho) in RHOS.iter().enumerate() {
            let f = crop(&sol.q, &sol.v, delta, rho, CropVariant::QDiff);
            for (s, g) in per_step_gap(&f).into_iter().enumerate() {
                checked += 1;
                if g > (1.0 - delta) * rho + BOUND_TOL {
                    violations.push(format!("gap δ={delta} ρ={rho} s={s}: {g}"));
                }
            }
            let r = loss_bound_report(&mdp, &f, n, derive_seed(2, &[i as u64, j as u64])).unwrap();
            if !(r.per_step_ok && r.rollout_sum_ok && r.max_proxy_ok) {
                violations.push(format!("sum δ={delta} ρ={rho}: {r:?}"));
            }
            if r.e_l_tight > r.e_l_bound + BOUND_TOL {
                violations.push(format!("N(1−δ)ρ > Nρ at δ={delta} ρ={rho}"));
            }
        }
    }
    outcome(
        violations.is_empty(),
        format!("{checked} per-state gaps and 25 N=100 sums checked, {} violations {:?}", violations.len(), violations),
    )
}

/// Exact return of f against 10⁶ rollouts at five seeded grid cells.
fn exact_return_vs_rollouts() -> Outcome {
    let (mdp, sol) = canonical();
    let mut cells = Vec::new();
    for v in CropVariant::ALL {
        for d in DELTAS {
            for r in RHOS {
                cells.push((d, r, v));
            }
        }
    }
    let mut details = Vec::new();
    let mut pass = true;
    let mut picked = Vec::new();
    let mut k = 0u64;
    while picked.len() < 5 {
        let idx = (derive_seed(3, &[k]) % cells.len() as u64) as usize;
        k += 1;
        if !picked.contains(&idx) {
            picked.push(idx);
        }
    }
    for (i, &idx) in picked.iter().enumerate() {
        let (d, r, v) = cells[idx];
        let f = crop(&sol.q, &sol.v, d, r, v);
        let exact = expected_return_crop(&mdp, &f).unwrap();
        let mc = monte_carlo_return(&mdp, &f, 1_000_000, 300, derive_seed(3, &[1000 + i as u64]));
        let ok = mc.within(exact, 3.0);
        pass &= ok;
        details.push(format!(
            "{v}(δ={d}, ρ={r}): exact {exact:.6} mc {:.6}±{:.6} {}",
            mc.mean,
            mc.stderr,
            if ok { "ok" } else { "OUTSIDE 3se" }
        ));
    }
    outcome(pass, details.join("; "))
}

/// Analytic collection formula: hand values and agreement with simulation.
fn collection_formula() -> Outcome {
    let a1 = expected_trajectories_analytic(&BudgetModel::collection(1, 0.5).unwrap()).unwrap();
    let a2 = expected_trajectories_analytic(&BudgetModel::collection(2, 0.5).unwrap()).unwrap();
    let mut pass = a1 == 2.0 && (a2 - 22.0 / 3.0).abs() <= 1e-9;
    let mut disagree = Vec::new();
    let mut exact_disagree = Vec::new();
    for t in 1..=4 {
        for (j, delta) in [0.3, 0.5, 0.7].into_iter().enumerate() {
            let model = BudgetModel::collection(t, delta).unwrap();
            let mc = expected_trajectories_mc(&model, 100_000, derive_seed(4, &[t as u64, j as u64])).unwrap();
            let exact = expected_trajectories_exact(&model).unwrap();
            if !mc.agrees(3.0) {
                let same = (exact - mc.expected_pulls_analytic).abs() <= 1e-9;
                disagree.push(format!(
                    "T={t} δ={delta}: analytic {:.4} vs mc {:.4}±{:.4}{}",
                    mc.expected_pulls_analytic,
                    mc.expected_pulls_mc,
                    mc.mc_stderr,
                    if same { " (analytic equals exact here)" } else { "" }
                ));
            }
            if (exact - mc.expected_pulls_mc).abs() > 3.0 * mc.mc_stderr {
                exact_disagree.push(format!("T={t} δ={delta}"));
            }
        }
    }
    pass &= disagree.is_empty();
    outcome(
        pass,
        format!(
            "T=1,δ=0.5 → {a1}; T=2,δ=0.5 → {a2}; analytic/mc disagreements {}/12 {:?}; \
             diagnostic: order-averaged exact/mc disagreements {}/12 {:?}",
            disagree.len(),
            disagree,
            exact_disagree.len(),
            exact_disagree
        ),
    )
}

/// Optimal-pairs budget, fragment bounds and the empirical fragment CDF.
fn fragment_bounds() -> Outcome {
    let pairs = budget_to_optimal_pairs(0.5, 20.0).unwrap();
    let (lo, hi) = markov_fragment_bounds(10, 6.0, 4.0).unwrap();
    let mut pass = pairs == 10 && lo == 0.0 && (hi - 2.0 / 3.0).abs() <= 1e-12;
    let (mdp, sol) = canonical();
    let grid_f = crop(&sol.q, &sol.v, 0.5, 0.1, CropVariant::QDiff);
    let chain = build_chain(8, 0.9).unwrap();
    let chain_pi = StochasticPolicy::uniform(8, 2);
    let horizon = 20;
    let mut details = vec![format!("pairs(0.5, 20) = {pairs}, bounds(10, 6, 4) = ({lo}, {hi})")];
    let sims: [(&str, Vec<(usize, usize)>); 2] = [
        ("gridworld", fragment_samples(&mdp, &grid_f, horizon, 10_000, 51).unwrap()),
        ("chain", fragment_samples(&chain, &chain_pi, horizon, 10_000, 52).unwrap()),
    ];
    for (name, samples) in sims {
        let sizes: Vec<usize> = samples.iter().map(|s| s.0).collect();
        let checks = check_fragment_bounds(&sizes, horizon, 50).unwrap();
        let violations = checks.iter().filter(|c| !c.holds()).count();
        pass &= violations == 0;
        let k = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
        details.push(format!("{name}: k={k:.3}, {violations}/{} thresholds violated", checks.len()));
    }
    outcome(pass, details.join("; "))
}

/// The ε-optimality bound holds with measured maxima; halved values are
/// reported reproducibly.
fn theorem_checker() -> Outcome {
    let (mdp, sol) = canonical();
    let run = || {
        let mut out = Vec::new();
        for (i, episodes) in [200usize, 1_000, 5_000].into_iter().enumerate() {
            let learned = q_learning(
                &mdp,
                &QLearningConfig {
                    episodes,
                    horizon: 100,
                    lr: LrSchedule::Polynomial { power: 0.6 },
                    explore: 0.3,
                    seed: derive_seed(6, &[i as u64]),
                },
            )
            .unwrap();
            let (v_pi, q_pi) = evaluate_policy_exact(&mdp, &greedy_policy(&learned)).unwrap();
            for (delta, rho) in [(0.0, 0.05), (0.5, 0.1), (0.9, 0.5)] {
                let f = crop(&q_pi, &v_pi, delta, rho, CropVariant::QDiff);
                let (_, q_f) = evaluate_policy_exact(&mdp, &crop_stochastic_policy(&f).unwrap()).unwrap();
                let m = check_theorem1(&sol.q, &q_pi, &q_f, 0.0, 0.0, 1.0).unwrap();
                let full = check_theorem1(&sol.q, &q_pi, &q_f, m.eps, m.eps_prime, 1.0).unwrap();
                let half = check_theorem1(&sol.q, &q_pi, &q_f, m.eps / 2.0, m.eps_prime / 2.0, 1.0).unwrap();
                out.push((full, half));
            }
        }
        out
    };
    let first = run();
    let reproducible = first == run();
    let all_full = first.iter().all(|(f, _)| f.bound_satisfied_fraction == 1.0);
    let halves: Vec<String> = first.iter().map(|(_, h)| format!("{:.3}", h.bound_satisfied_fraction)).collect();
    outcome(
        all_full && reproducible,
        format!(
            "{} triples, measured-maxima fraction 1.0 on all: {all_full}; halved fractions [{}]; reproducible: {reproducible}",
            first.len(),
            halves.join(", ")
        ),
    )
}

/// Randomized demonstrations need more samples to imitate to 0.95.
fn defense_efficacy() -> Outcome {
    let (mdp, sol) = canonical();
    let noisy = crop(&sol.q, &sol.v, 0.6, 0.1, CropVariant::QDiff);
    let clean = crop(&sol.q, &sol.v, 1.0, 0.1, CropVariant::QDiff);
    let search = |deployment| ThresholdSearch {
        attacker: Default::default(),
        threshold: 0.95,
        batch: 1,
        max_samples: 100,
        trials: 50,
        horizon: 100,
        smoothing: 0.0,
        deployment,
        seed: 7,
    };
    let cfg = search(Deployment::default());
    let a = samples_to_threshold(&mdp, &noisy, &cfg).unwrap();
    let b = samples_to_threshold(&mdp, &clean, &cfg).unwrap();
    let test = rank_sum_greater(&a.samples(), &b.samples());
    let pass = a.median() > b.median() && test.p_greater < 0.05;
    let cfg = search(Deployment::Majority);
    let am = samples_to_threshold(&mdp, &noisy, &cfg).unwrap();
    let bm = samples_to_threshold(&mdp, &clean, &cfg).unwrap();
    let tm = rank_sum_greater(&am.samples(), &bm.samples());
    let ceiling = expected_return_crop(&mdp, &noisy).unwrap() / expected_return(&mdp, &greedy_policy(&sol.q)).unwrap();
    outcome(
        pass,
        format!(
            "{} deployment: median {} (censored {}/50) vs {} (censored {}/50), p = {:.3e}; \
             diagnostic majority-vote deployment: median {} vs {}, p = {:.3}; return ratio of f itself {:.3}",
            Deployment::default(),
            a.median(),
            a.censored_count(),
            b.median(),
            b.censored_count(),
            test.p_greater,
            am.median(),
            bm.median(),
            tm.p_greater,
            ceiling
        ),
    )
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            collect_files(&p, out);
        } else {
            out.push(p);
        }
    }
}

/// Two full sweeps with the same configuration write identical bytes.
fn determinism() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/canonical.ini");
    let base = load_config(&path).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (d, jobs) in dirs.iter().zip([1, 2]) {
        let mut cfg = base.clone();
        cfg.output_dir = d.path().to_path_buf();
        with_jobs(Some(jobs), || cmd_sweep(&cfg)).unwrap();
    }
    let mut files = Vec::new();
    collect_files(dirs[0].path(), &mut files);
    files.sort();
    let mut differing = Vec::new();
    let mut csvs = 0;
    for f in &files {
        let rel = f.strip_prefix(dirs[0].path()).unwrap();
        csvs += usize::from(rel.extension().is_some_and(|e| e == "csv"));
        if fs::read(f).ok() != fs::read(dirs[1].path().join(rel)).ok() {
            differing.push(rel.display().to_string());
        }
    }
    outcome(
        differing.is_empty() && csvs >= 8,
        format!("{} files ({csvs} CSV) compared across 1- and 2-worker sweeps, differing: {:?}", files.len(), differing),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Option<Duration>); 8] = [
        ("1 degeneracies", degeneracies, Some(Duration::from_secs(1))),
        ("2 loss bounds", loss_bounds, Some(Duration::from_secs(10))),
        ("3 exact return vs rollouts", exact_return_vs_rollouts, Some(Duration::from_secs(120))),
        ("4 collection formula", collection_formula, Some(Duration::from_secs(60))),
        ("5 fragment bounds", fragment_bounds, None),
        ("6 theorem checker", theorem_checker, None),
        ("7 defense efficacy", defense_efficacy, Some(Duration::from_secs(300))),
        ("8 determinism", determinism, None),
    ];
    let mut failed = Vec::new();
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let o = run();
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let pass = o.pass && in_time;
        let budget = limit.map_or(String::new(), |l| format!(" / limit {:.0} s", l.as_secs_f64()));
        println!(
            "{} criterion {name} ({:.2} s{budget}): {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            o.detail
        );
        if !pass {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 8 criteria passed");
    } else {
        println!("acceptance: {} of 8 criteria failed: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
}
