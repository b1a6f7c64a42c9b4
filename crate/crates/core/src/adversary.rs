//! Imitation attackers trained on randomized demonstrations.
//!
//! The adversary passively watches the defended agent and fits a per-state
//! action model. Behavioural cloning uses empirical action frequencies (the
//! maximum-likelihood fit); the DAgger-style learner additionally queries the
//! defended agent at states its own policy visits. States never observed fall
//! back to the uniform distribution.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::crop::{crop_act, crop_action_distribution, CropError, CropPolicy};
use crate::mdp::{rollout, Behavior, DemoSet, FiniteMdp, SourceLabel};
use crate::rng::{derive_seed, seeded};
use crate::solver::{
    argmax, discounted_occupancy, evaluate_policy_exact, expected_return, greedy_policy, QTable, SolverError,
    StochasticPolicy,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdversaryError {
    #[error("demonstration set contains no state-action pairs")]
    EmptyDemos,
    #[error("demonstration visits state {state} / action {action} outside a {n_states}x{n_actions} space")]
    OutOfRange { state: usize, action: usize, n_states: usize, n_actions: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Crop(#[from] CropError),
}

/// How a fitted imitator picks actions when deployed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Deployment {
    /// Most frequent observed action, ties to the lowest index.
    Majority,
    /// Sample from the fitted frequencies, i.e. play the cloned
    /// distribution itself.
    #[default]
    Sampled,
}

impl fmt::Display for Deployment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Deployment::Majority => "majority",
            Deployment::Sampled => "sampled",
        })
    }
}

impl FromStr for Deployment {
    type Err = AdversaryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "majority" => Ok(Deployment::Majority),
            "sampled" => Ok(Deployment::Sampled),
            other => Err(AdversaryError::Parameter(format!("unknown deployment {other:?}"))),
        }
    }
}

/// Rule applied at states with no observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnseenRule {
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImitatorPolicy {
    n_states: usize,
    n_actions: usize,
    smoothing: f64,
    visit_counts: Vec<u64>,
    dist: Vec<f64>,
    pub unseen_default: UnseenRule,
}

impl ImitatorPolicy {
    /// Fit from raw `(state, action)` counts with additive smoothing.
    pub fn from_counts(n_states: usize, n_actions: usize, visit_counts: Vec<u64>, smoothing: f64) -> Result<Self, AdversaryError> {
        if visit_counts.len() != n_states * n_actions {
            return Err(AdversaryError::Shape("count table size".into()));
        }
        if !smoothing.is_finite() || smoothing < 0.0 {
            return Err(AdversaryError::Parameter(format!("smoothing {smoothing} must be >= 0")));
        }
        let mut dist = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            let counts = &visit_counts[s * n_actions..][..n_actions];
            let total: u64 = counts.iter().sum();
            let row = &mut dist[s * n_actions..][..n_actions];
            if total == 0 {
                row.fill(1.0 / n_actions as f64);
            } else {
                let denom = total as f64 + smoothing * n_actions as f64;
                for (p, &c) in row.iter_mut().zip(counts) {
                    *p = (c as f64 + smoothing) / denom;
                }
            }
        }
        Ok(Self { n_states, n_actions, smoothing, visit_counts, dist, unseen_default: UnseenRule::Uniform })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn visit_counts(&self) -> &[u64] {
        &self.visit_counts
    }

    pub fn observations(&self, state: usize) -> u64 {
        self.visit_counts[state * self.n_actions..][..self.n_actions].iter().sum()
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.dist[state * self.n_actions..][..self.n_actions]
    }

    /// Majority-vote action, or `None` at an unseen state.
    pub fn majority_action(&self, state: usize) -> Option<usize> {
        if self.observations(state) == 0 {
            return None;
        }
        let counts: Vec<f64> = self.visit_counts[state * self.n_actions..][..self.n_actions]
            .iter()
            .map(|&c| c as f64)
            .collect();
        Some(argmax(&counts))
    }

    pub fn deployed(&self, how: Deployment) -> StochasticPolicy {
        match how {
            Deployment::Sampled => StochasticPolicy::new(self.n_states, self.n_actions, self.dist.clone())
                .expect("fitted rows are normalised"),
            Deployment::Majority => {
                let mut dist = vec![0.0; self.n_states * self.n_actions];
                for s in 0..self.n_states {
                    let row = &mut dist[s * self.n_actions..][..self.n_actions];
                    match self.majority_action(s) {
                        Some(a) => row[a] = 1.0,
                        None => row.fill(1.0 / self.n_actions as f64),
                    }
                }
                StochasticPolicy::new(self.n_states, self.n_actions, dist).expect("one-hot or uniform rows")
            }
        }
    }
}

fn accumulate(counts: &mut [u64], demos: &DemoSet, n_states: usize, n_actions: usize) -> Result<(), AdversaryError> {
    for (state, action) in demos.pairs() {
        if state >= n_states || action >= n_actions {
            return Err(AdversaryError::OutOfRange { state, action, n_states, n_actions });
        }
        counts[state * n_actions + action] += 1;
    }
    Ok(())
}

/// Behavioural cloning: per-state empirical action frequencies.
pub fn bc_fit(demos: &DemoSet, n_states: usize, n_actions: usize, smoothing: f64) -> Result<ImitatorPolicy, AdversaryError> {
    if demos.n_pairs() == 0 {
        return Err(AdversaryError::EmptyDemos);
    }
    let mut counts = vec![0u64; n_states * n_actions];
    accumulate(&mut counts, demos, n_states, n_actions)?;
    ImitatorPolicy::from_counts(n_states, n_actions, counts, smoothing)
}

/// `count` rollouts of the defended agent, rollout `i` seeded with
/// `derive_seed(seed, [i])`.
pub fn expert_demos(mdp: &FiniteMdp, expert: &CropPolicy, count: usize, horizon: usize, seed: u64) -> DemoSet {
    let trajectories = (0..count as u64)
        .map(|i| rollout(mdp, expert, horizon, derive_seed(seed, &[i])))
        .collect();
    DemoSet {
        trajectories,
        source: SourceLabel { target: "crop".into(), crop: Some(*expert.config()), seed },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaggerConfig {
    pub rounds: usize,
    pub rollouts_per_round: usize,
    pub horizon: usize,
    pub smoothing: f64,
    /// How the learner acts while collecting its own states.
    pub deployment: Deployment,
    pub seed: u64,
}

/// DAgger-style learner. Round 0 clones expert rollouts; each later round
/// rolls out the current imitator, labels every visited state with the
/// expert's sampled action (given the learner's actual previous state),
/// aggregates and refits.
pub fn dagger_fit(mdp: &FiniteMdp, expert: &CropPolicy, cfg: &DaggerConfig) -> Result<ImitatorPolicy, AdversaryError> {
    if cfg.rounds == 0 {
        return Err(AdversaryError::Parameter("rounds must be at least 1".into()));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut counts = vec![0u64; ns * na];
    let first = expert_demos(mdp, expert, cfg.rollouts_per_round, cfg.horizon, derive_seed(cfg.seed, &[0]));
    if first.n_pairs() == 0 {
        return Err(AdversaryError::EmptyDemos);
    }
    accumulate(&mut counts, &first, ns, na)?;
    let mut imitator = ImitatorPolicy::from_counts(ns, na, counts.clone(), cfg.smoothing)?;
    for round in 1..cfg.rounds as u64 {
        let learner = imitator.deployed(cfg.deployment);
        for i in 0..cfg.rollouts_per_round as u64 {
            let seed = derive_seed(cfg.seed, &[round, i]);
            labelled_rollout(mdp, expert, &learner, cfg.horizon, seed, &mut counts);
        }
        imitator = ImitatorPolicy::from_counts(ns, na, counts.clone(), cfg.smoothing)?;
    }
    Ok(imitator)
}

/// Roll out `learner`, adding the expert's sampled label at every visited
/// state to `counts`.
fn labelled_rollout(
    mdp: &FiniteMdp,
    expert: &CropPolicy,
    learner: &StochasticPolicy,
    horizon: usize,
    seed: u64,
    counts: &mut [u64],
) {
    let na = mdp.n_actions();
    let mut rng = seeded(seed);
    let mut state = mdp.sample_start(&mut rng);
    let mut prev = None;
    for _ in 0..horizon {
        if mdp.is_terminal(state) {
            break;
        }
        let (label, _) = crop_act(state, prev, expert, &mut rng);
        counts[state * na + label] += 1;
        let a = learner.sample_action(prev, state, &mut rng);
        prev = Some(state);
        state = mdp.sample_next(state, a, &mut rng);
    }
}

// ── Fidelity ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityReport {
    /// Mean over non-terminal states of the imitator's argmax agreeing with
    /// `π(s)`; a tie among `m` maximal actions that includes `π(s)` counts
    /// `1/m`.
    pub action_match_rate: f64,
    /// `V^imitator / V^π` from the start distribution.
    pub return_ratio: f64,
    pub samples_used: usize,
    /// Mean total-variation distance between the imitator's fitted
    /// distribution and the defended agent's, weighted by the imitator's
    /// discounted state occupancy over non-terminal states.
    pub tv_distance: f64,
}

/// Compare an imitator with the target. For history-dependent variants the
/// target distribution is taken at the first-step context `(s, s)`.
pub fn fidelity(
    imitator: &ImitatorPolicy,
    target_q: &QTable,
    target_crop: &CropPolicy,
    mdp: &FiniteMdp,
    deployment: Deployment,
    samples_used: usize,
) -> Result<FidelityReport, AdversaryError> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if imitator.n_states != ns || imitator.n_actions != na || target_q.n_states() != ns || target_q.n_actions() != na {
        return Err(AdversaryError::Shape("imitator, target table and MDP must agree".into()));
    }
    if target_crop.n_states() != ns {
        return Err(AdversaryError::Shape("target CRoP policy has wrong state count".into()));
    }
    let pi = greedy_policy(target_q);
    let mut match_sum = 0.0;
    let mut live = 0usize;
    for s in (0..ns).filter(|&s| !mdp.is_terminal(s)) {
        live += 1;
        let target = argmax(pi.row(s));
        let row = imitator.row(s);
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winners = row.iter().filter(|&&p| p == top).count();
        if row[target] == top {
            match_sum += 1.0 / winners as f64;
        }
    }
    let action_match_rate = if live == 0 { 1.0 } else { match_sum / live as f64 };

    let deployed = imitator.deployed(deployment);
    let (v_imitator, _) = evaluate_policy_exact(mdp, &deployed)?;
    let g_imitator = mdp.weighted_by_start(&v_imitator.values);
    let g_target = expected_return(mdp, &pi)?;
    let return_ratio = ratio(g_imitator, g_target);

    let occupancy = discounted_occupancy(mdp, &deployed)?;
    let mut weight = 0.0;
    let mut tv = 0.0;
    for s in (0..ns).filter(|&s| !mdp.is_terminal(s) && occupancy[s] > 0.0) {
        let target = crop_action_distribution(s, None, target_crop);
        let d: f64 = imitator.row(s).iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
        tv += occupancy[s] * d;
        weight += occupancy[s];
    }
    let tv_distance = if weight > 0.0 { (tv / weight).clamp(0.0, 1.0) } else { 0.0 };
    Ok(FidelityReport { action_match_rate, return_ratio, samples_used, tv_distance })
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num.abs() <= f64::EPSILON {
        1.0
    } else {
        f64::INFINITY
    }
}

// ── Sample complexity ────────────────────────────────────────────────────

/// Which imitation learner a threshold search trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Attacker {
    /// Behavioural cloning on the defended agent's own rollouts.
    #[default]
    Bc,
    /// First batch cloned from the defended agent's rollouts, later batches
    /// are the learner's rollouts labelled by the defended agent.
    Dagger,
}

impl fmt::Display for Attacker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attacker::Bc => "bc",
            Attacker::Dagger => "dagger",
        })
    }
}

impl FromStr for Attacker {
    type Err = AdversaryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bc" => Ok(Attacker::Bc),
            "dagger" => Ok(Attacker::Dagger),
            other => Err(AdversaryError::Parameter(format!("unknown attacker {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSearch {
    pub attacker: Attacker,
    /// Fraction of the target's return the replica must reach.
    pub threshold: f64,
    /// Demonstrations added between evaluations.
    pub batch: usize,
    /// Censoring limit, in demonstrations.
    pub max_samples: usize,
    pub trials: usize,
    pub horizon: usize,
    pub smoothing: f64,
    pub deployment: Deployment,
    pub seed: u64,
}

impl ThresholdSearch {
    fn validate(&self) -> Result<(), AdversaryError> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(AdversaryError::Parameter(format!("threshold {} outside (0, 1]", self.threshold)));
        }
        if self.batch == 0 || self.trials == 0 || self.max_samples == 0 {
            return Err(AdversaryError::Parameter("batch, trials and max_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one attack trial.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackTrial {
    /// `(demonstrations seen, return ratio)` after each batch.
    pub curve: Vec<(usize, f64)>,
    /// Demonstrations needed to reach the threshold, or `max_samples` when
    /// censored.
    pub samples: usize,
    pub censored: bool,
    pub final_fidelity: FidelityReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdDistribution {
    pub trials: Vec<AttackTrial>,
}

impl ThresholdDistribution {
    pub fn samples(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.samples as f64).collect()
    }

    pub fn censored_count(&self) -> usize {
        self.trials.iter().filter(|t| t.censored).count()
    }

    pub fn median(&self) -> f64 {
        crate::stats::median(&self.samples())
    }
}

/// Feed demonstrations in batches to the attacker until the replica
/// reaches `threshold` of the target's return. With `full_curve` the trial
/// keeps going to `max_samples` to record a complete learning curve; the
/// first crossing is still what `samples` reports.
pub fn attack_trial(
    mdp: &FiniteMdp,
    expert: &CropPolicy,
    cfg: &ThresholdSearch,
    trial_seed: u64,
    full_curve: bool,
) -> Result<AttackTrial, AdversaryError> {
    cfg.validate()?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let g_target = expected_return(mdp, &expert.base_policy())?;
    let mut counts = vec![0u64; ns * na];
    let mut seen = 0usize;
    let mut curve = Vec::new();
    let mut crossing = None;
    let mut last: Option<ImitatorPolicy> = None;
    while seen < cfg.max_samples {
        let take = cfg.batch.min(cfg.max_samples - seen);
        let learner = match (&last, cfg.attacker) {
            (Some(im), Attacker::Dagger) => Some(im.deployed(cfg.deployment)),
            _ => None,
        };
        for i in 0..take {
            let seed = derive_seed(trial_seed, &[(seen + i) as u64]);
            match &learner {
                Some(policy) => labelled_rollout(mdp, expert, policy, cfg.horizon, seed, &mut counts),
                None => {
                    for st in &rollout(mdp, expert, cfg.horizon, seed).steps {
                        counts[st.state * na + st.action] += 1;
                    }
                }
            }
        }
        seen += take;
        let imitator = ImitatorPolicy::from_counts(ns, na, counts.clone(), cfg.smoothing)?;
        let g = expected_return(mdp, &imitator.deployed(cfg.deployment))?;
        let r = ratio(g, g_target);
        curve.push((seen, r));
        if crossing.is_none() && r >= cfg.threshold {
            crossing = Some(seen);
        }
        last = Some(imitator);
        if crossing.is_some() && !full_curve {
            break;
        }
    }
    let imitator = last.expect("at least one batch");
    let final_fidelity = fidelity(&imitator, expert.base_q(), expert, mdp, cfg.deployment, seen)?;
    Ok(AttackTrial {
        curve,
        samples: crossing.unwrap_or(cfg.max_samples),
        censored: crossing.is_none(),
        final_fidelity,
    })
}

/// Run `cfg.trials` independent trials; trial `i` uses
/// `derive_seed(cfg.seed, [i])`, so two experts attacked with the same
/// configuration form paired trials.
pub fn samples_to_threshold(mdp: &FiniteMdp, expert: &CropPolicy, cfg: &ThresholdSearch) -> Result<ThresholdDistribution, AdversaryError> {
    run_trials(mdp, expert, cfg, false)
}

/// As [`samples_to_threshold`], but every trial runs to `max_samples`.
pub fn learning_curves(mdp: &FiniteMdp, expert: &CropPolicy, cfg: &ThresholdSearch) -> Result<ThresholdDistribution, AdversaryError> {
    run_trials(mdp, expert, cfg, true)
}

fn run_trials(mdp: &FiniteMdp, expert: &CropPolicy, cfg: &ThresholdSearch, full: bool) -> Result<ThresholdDistribution, AdversaryError> {
    cfg.validate()?;
    let trials = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|i| attack_trial(mdp, expert, cfg, derive_seed(cfg.seed, &[i]), full))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ThresholdDistribution { trials })
}
