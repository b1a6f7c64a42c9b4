//! Expected-return decomposition and loss bounds for the randomized policy.
//!
//! The per-step quantity is evaluated state by state under the base value
//! table: `(1 − δ) · (Q(s, π(s)) − mean_{â ∈ Â(s)} Q(s, â))`. For `QDiff` every
//! candidate is within `ρ` of `π(s)`, so each term is below `(1 − δ)ρ` and any
//! `N`-step sum is below `N(1 − δ)ρ ≤ Nρ`. The measured return gap
//! `G* − G^f` is reported next to these numbers but is not bounded by them:
//! diversions also shift which states get visited.

use crate::crop::{augmented_model, crop_stochastic_policy, CropError, CropPolicy, CropVariant};
use crate::mdp::FiniteMdp;
use crate::rng::seeded;
use crate::solver::expected_return;

/// Absolute slack on per-step bound comparisons.
pub const BOUND_TOL: f64 = 1e-12;

/// Tag describing where the per-step expectation is taken. Recorded in
/// reports because the choice between the base policy's and `f`'s state
/// distribution is a modelling decision.
pub const EXPECTATION_BASIS: &str = "base-q-per-state";

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Return of `π` from the start distribution.
    pub g_star: f64,
    /// Return of `f` from the start distribution.
    pub g_f: f64,
    pub per_step_gap_max: f64,
    /// `(1 − δ)ρ`.
    pub bound_per_step: f64,
    pub horizon_n: usize,
    /// `Nρ`.
    pub e_l_bound: f64,
    /// `N(1 − δ)ρ`.
    pub e_l_tight: f64,
    /// `G* − G^f`, diagnostic only.
    pub empirical_gap: f64,
    /// Sum of per-step gaps over `N` steps of `f`'s own rollouts.
    pub rollout_gap_sum: f64,
    /// `N · max_s gap(s)`.
    pub max_proxy_sum: f64,
    pub per_step_ok: bool,
    pub rollout_sum_ok: bool,
    pub max_proxy_ok: bool,
    /// The bounds are guaranteed only for `QDiff`; the flags are still
    /// computed for the advantage variants.
    pub bound_applicable: bool,
}

impl LossReport {
    pub fn all_ok(&self) -> bool {
        self.per_step_ok && self.rollout_sum_ok && self.max_proxy_ok
    }
}

/// Exact start-weighted return of `f`. History-dependent variants are
/// evaluated on the pair-state chain.
pub fn expected_return_crop(mdp: &FiniteMdp, crop: &CropPolicy) -> Result<f64, CropError> {
    if crop.config().variant == CropVariant::QDiff {
        let table = crop_stochastic_policy(crop)?;
        Ok(expected_return(mdp, &table)?)
    } else {
        let (aug, table) = augmented_model(mdp, crop)?;
        Ok(expected_return(&aug, &table)?)
    }
}

/// One-step expected shortfall per decision context (see
/// [`CropPolicy::n_contexts`]); zero where `Â` is empty.
pub fn per_step_gap(crop: &CropPolicy) -> Vec<f64> {
    let keep = 1.0 - crop.config().delta;
    (0..crop.n_contexts())
        .map(|c| match crop.candidate_mean_q(c) {
            Some(mean) => {
                let s = crop.context_state(c);
                keep * (crop.base_q().get(s, crop.base_action(s)) - mean)
            }
            None => 0.0,
        })
        .collect()
}

/// Sum of per-step gaps along `n` steps of `f`, restarting from the start
/// distribution whenever an episode ends early.
fn rollout_gap_sum(mdp: &FiniteMdp, crop: &CropPolicy, gaps: &[f64], n: usize, seed: u64) -> f64 {
    use crate::crop::crop_act;
    let mut rng = seeded(seed);
    let mut total = 0.0;
    let mut steps = 0;
    while steps < n {
        let mut state = mdp.sample_start(&mut rng);
        let mut prev = None;
        if mdp.is_terminal(state) {
            // nothing to act on from here; every remaining step contributes 0
            break;
        }
        while steps < n && !mdp.is_terminal(state) {
            total += gaps[crop.context(prev, state)];
            let (a, _) = crop_act(state, prev, crop, &mut rng);
            prev = Some(state);
            state = mdp.sample_next(state, a, &mut rng);
            steps += 1;
        }
    }
    total
}

pub fn loss_bound_report(
    mdp: &FiniteMdp,
    crop: &CropPolicy,
    horizon_n: usize,
    seed: u64,
) -> Result<LossReport, CropError> {
    let cfg = *crop.config();
    let g_star = expected_return(mdp, &crop.base_policy())?;
    let g_f = expected_return_crop(mdp, crop)?;
    let gaps = per_step_gap(crop);
    let per_step_gap_max = gaps.iter().copied().fold(0.0, f64::max);
    let bound_per_step = (1.0 - cfg.delta) * cfg.rho;
    let n = horizon_n as f64;
    let e_l_tight = n * bound_per_step;
    let e_l_bound = n * cfg.rho;
    let rollout_sum = rollout_gap_sum(mdp, crop, &gaps, horizon_n, seed);
    let max_proxy_sum = n * per_step_gap_max;
    let sum_tol = n.max(1.0) * BOUND_TOL;
    Ok(LossReport {
        g_star,
        g_f,
        per_step_gap_max,
        bound_per_step,
        horizon_n,
        e_l_bound,
        e_l_tight,
        empirical_gap: g_star - g_f,
        rollout_gap_sum: rollout_sum,
        max_proxy_sum,
        per_step_ok: per_step_gap_max <= bound_per_step + BOUND_TOL && bound_per_step <= cfg.rho,
        rollout_sum_ok: rollout_sum <= e_l_tight + sum_tol && e_l_tight <= e_l_bound,
        max_proxy_ok: max_proxy_sum <= e_l_tight + sum_tol,
        bound_applicable: cfg.variant == CropVariant::QDiff,
    })
}
