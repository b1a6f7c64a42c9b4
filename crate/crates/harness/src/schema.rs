//! CSV schemas. Every file's header row is exactly its column list; the
//! first column, `schema`, carries `<name>/<version>` on every row.

pub struct Schema {
    pub file: &'static str,
    pub tag: &'static str,
    pub columns: &'static [&'static str],
}

pub const SOLVE: Schema = Schema {
    file: "solve.csv",
    tag: "solve/1",
    columns: &["schema", "method", "n_states", "n_actions", "gamma", "iterations", "final_residual", "g_star"],
};

pub const CROP_EVAL: Schema = Schema {
    file: "crop_eval.csv",
    tag: "crop-eval/1",
    columns: &[
        "schema",
        "experiment_id",
        "delta",
        "rho",
        "variant",
        "episodes",
        "total_timesteps",
        "succ_diversions",
        "delta_times_t_inferred",
        "g_star",
        "g_f",
        "return_ratio",
        "empirical_gap",
        "per_step_gap_max",
        "bound_per_step",
        "horizon_n",
        "e_l_tight",
        "e_l_bound",
        "rollout_gap_sum",
        "max_proxy_sum",
        "per_step_ok",
        "rollout_sum_ok",
        "max_proxy_ok",
        "bound_applicable",
        "expectation_basis",
    ],
};

pub const ATTACK_TRIALS: Schema = Schema {
    file: "attack_trials.csv",
    tag: "attack-trials/1",
    columns: &[
        "schema",
        "experiment_id",
        "delta",
        "rho",
        "variant",
        "attacker",
        "deployment",
        "trial",
        "threshold",
        "samples_to_threshold",
        "censored",
        "samples_used",
        "action_match_rate",
        "return_ratio",
        "tv_distance",
    ],
};

pub const ATTACK_CURVES: Schema = Schema {
    file: "attack_curves.csv",
    tag: "attack-curves/1",
    columns: &["schema", "experiment_id", "delta", "rho", "variant", "samples", "mean_return_ratio", "stderr", "trials"],
};

pub const ATTACK_CELLS: Schema = Schema {
    file: "attack_cells.csv",
    tag: "attack-cells/1",
    columns: &[
        "schema",
        "experiment_id",
        "delta",
        "rho",
        "variant",
        "trials",
        "censored_trials",
        "median_samples_to_threshold",
        "final_mean_return_ratio",
    ],
};

pub const BUDGET: Schema = Schema {
    file: "budget.csv",
    tag: "budget/1",
    columns: &[
        "schema",
        "T",
        "delta",
        "analytic",
        "mc_mean",
        "mc_stderr",
        "mc_trials",
        "exact",
        "analytic_within_3se",
        "exact_within_3se",
    ],
};

pub const BUDGET_PAIRS: Schema = Schema {
    file: "budget_pairs.csv",
    tag: "budget-pairs/1",
    columns: &["schema", "delta", "budget", "optimal_pairs"],
};

pub const BUDGET_BOUNDS: Schema = Schema {
    file: "budget_bounds.csv",
    tag: "budget-bounds/1",
    columns: &["schema", "T", "k", "k_stderr", "t", "lower", "upper", "p_below", "p_at_most", "holds"],
};

pub const ALL: [&Schema; 8] = [&SOLVE, &CROP_EVAL, &ATTACK_TRIALS, &ATTACK_CURVES, &ATTACK_CELLS, &BUDGET, &BUDGET_PAIRS, &BUDGET_BOUNDS];
