//! Exact and learned solutions of a [`FiniteMdp`].
//!
//! Argmax ties are broken toward the lowest action index everywhere in the
//! crate; [`argmax`] is the single implementation of that rule.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::mdp::{episode_return, Behavior, FiniteMdp};
use crate::rng::{derive_seed, sample_categorical, seeded};
use crate::stats::MeanEstimate;

/// Row tolerance for policy tables.
pub const POLICY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("value iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("episodes must be at least 1")]
    NoEpisodes,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid policy row {state}: {reason}")]
    PolicyRow { state: usize, reason: String },
    #[error("policy evaluation system is singular")]
    Singular,
}

// ── Tables ───────────────────────────────────────────────────────────────

/// State-action values, row-major `[state][action]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self, SolverError> {
        if values.len() != n_states * n_actions {
            return Err(SolverError::Shape(format!(
                "{} values for a {n_states}x{n_actions} table",
                values.len()
            )));
        }
        Ok(Self { n_states, n_actions, values })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, values: vec![0.0; n_states * n_actions] }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.n_actions + action]
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        self.values[state * self.n_actions + action] = value;
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.n_actions..][..self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `V(s) = max_a Q(s, a)`.
    pub fn state_values(&self) -> VTable {
        VTable {
            values: (0..self.n_states)
                .map(|s| self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &QTable) -> bool {
        self.n_states == other.n_states && self.n_actions == other.n_actions
    }

    /// `max |self - other|` over all entries.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VTable {
    pub values: Vec<f64>,
}

impl VTable {
    pub fn get(&self, state: usize) -> f64 {
        self.values[state]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-state action distribution. Deterministic policies are one-hot rows.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    n_states: usize,
    n_actions: usize,
    dist: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(n_states: usize, n_actions: usize, dist: Vec<f64>) -> Result<Self, SolverError> {
        if dist.len() != n_states * n_actions {
            return Err(SolverError::Shape(format!(
                "{} entries for a {n_states}x{n_actions} policy",
                dist.len()
            )));
        }
        for s in 0..n_states {
            let row = &dist[s * n_actions..][..n_actions];
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(SolverError::PolicyRow { state: s, reason: "negative entry".into() });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > POLICY_TOL {
                return Err(SolverError::PolicyRow { state: s, reason: format!("sums to {sum}") });
            }
        }
        Ok(Self { n_states, n_actions, dist })
    }

    pub fn from_actions(actions: &[usize], n_actions: usize) -> Self {
        let mut dist = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            dist[s * n_actions + a] = 1.0;
        }
        Self { n_states: actions.len(), n_actions, dist }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, dist: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.dist[state * self.n_actions..][..self.n_actions]
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.dist[state * self.n_actions + action]
    }

    pub fn table(&self) -> &[f64] {
        &self.dist
    }
}

impl Behavior for StochasticPolicy {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probs(&self, _prev: Option<usize>, state: usize, out: &mut [f64]) {
        out.copy_from_slice(self.row(state));
    }

    fn sample_action<R: Rng + ?Sized>(&self, _prev: Option<usize>, state: usize, rng: &mut R) -> usize {
        sample_categorical(self.row(state), rng)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_policy(q: &QTable) -> StochasticPolicy {
    let actions: Vec<usize> = (0..q.n_states()).map(|s| argmax(q.row(s))).collect();
    StochasticPolicy::from_actions(&actions, q.n_actions())
}

// ── Value iteration ──────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Solution {
    pub q: QTable,
    pub v: VTable,
    pub iterations: usize,
    /// Sup-norm change of V at each sweep.
    pub residuals: Vec<f64>,
}

fn backup(mdp: &FiniteMdp, v: &[f64], q: &mut QTable) {
    let gamma = mdp.gamma();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let future: f64 = mdp.successors(s, a).iter().map(|&(n, p)| p * v[n]).sum();
            q.set(s, a, mdp.reward(s, a) + gamma * future);
        }
    }
}

/// Expected Bellman optimality backups from `V = 0` until the sup-norm change
/// falls to `tol`.
pub fn value_iteration(mdp: &FiniteMdp, tol: f64, max_iters: usize) -> Result<Solution, SolverError> {
    if !(tol > 0.0) {
        return Err(SolverError::Tolerance(tol));
    }
    let mut v = vec![0.0; mdp.n_states()];
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    let mut residuals = Vec::new();
    for it in 1..=max_iters {
        backup(mdp, &v, &mut q);
        let next = q.state_values().values;
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        residuals.push(delta);
        if delta <= tol {
            return Ok(Solution { q, v: VTable { values: v }, iterations: it, residuals });
        }
    }
    Err(SolverError::NotConverged {
        iterations: max_iters,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

// ── Q-learning ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// `1 / n(s,a)^power`, with `n` the visit count of the updated pair.
    Polynomial { power: f64 },
}

impl LrSchedule {
    fn rate(&self, visits: u64) -> f64 {
        match *self {
            LrSchedule::Constant(a) => a,
            LrSchedule::Polynomial { power } => (visits as f64).powf(-power),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QLearningConfig {
    pub episodes: usize,
    pub horizon: usize,
    pub lr: LrSchedule,
    /// ε of the ε-greedy behaviour policy.
    pub explore: f64,
    pub seed: u64,
}

/// Tabular Q-learning with ε-greedy exploration from the start distribution.
pub fn q_learning(mdp: &FiniteMdp, cfg: &QLearningConfig) -> Result<QTable, SolverError> {
    if cfg.episodes == 0 {
        return Err(SolverError::NoEpisodes);
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = QTable::zeros(ns, na);
    let mut visits = vec![0u64; ns * na];
    let mut rng = seeded(cfg.seed);
    for _ in 0..cfg.episodes {
        let mut s = mdp.sample_start(&mut rng);
        for _ in 0..cfg.horizon {
            if mdp.is_terminal(s) {
                break;
            }
            let a = if rng.random::<f64>() < cfg.explore {
                rng.random_range(0..na)
            } else {
                argmax(q.row(s))
            };
            let next = mdp.sample_next(s, a, &mut rng);
            let target = mdp.reward(s, a)
                + if mdp.is_terminal(next) {
                    0.0
                } else {
                    mdp.gamma() * q.row(next).iter().copied().fold(f64::NEG_INFINITY, f64::max)
                };
            visits[s * na + a] += 1;
            let alpha = cfg.lr.rate(visits[s * na + a]);
            let old = q.get(s, a);
            q.set(s, a, old + alpha * (target - old));
            s = next;
        }
    }
    Ok(q)
}

// ── Exact evaluation ─────────────────────────────────────────────────────

/// Solve `(I - γ P_π) V = r_π` by LU decomposition and return `(V^π, Q^π)`.
pub fn evaluate_policy_exact(
    mdp: &FiniteMdp,
    policy: &StochasticPolicy,
) -> Result<(VTable, QTable), SolverError> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if policy.n_states() != ns || policy.n_actions != na {
        return Err(SolverError::Shape(format!(
            "policy is {}x{}, MDP is {ns}x{na}",
            policy.n_states(),
            policy.n_actions
        )));
    }
    let gamma = mdp.gamma();
    let mut lhs = DMatrix::<f64>::identity(ns, ns);
    let mut rhs = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        for (a, &pa) in policy.row(s).iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            rhs[s] += pa * mdp.reward(s, a);
            for &(n, p) in mdp.successors(s, a) {
                lhs[(s, n)] -= gamma * pa * p;
            }
        }
    }
    let v = lhs.lu().solve(&rhs).ok_or(SolverError::Singular)?;
    let v: Vec<f64> = v.iter().copied().collect();
    let mut q = QTable::zeros(ns, na);
    backup(mdp, &v, &mut q);
    Ok((VTable { values: v }, q))
}

/// Normalised discounted state occupancy `d = (1 − γ) Σ_t γ^t P(s_t = ·)`
/// of `policy` from the start distribution.
pub fn discounted_occupancy(mdp: &FiniteMdp, policy: &StochasticPolicy) -> Result<Vec<f64>, SolverError> {
    let ns = mdp.n_states();
    if policy.n_states() != ns || policy.n_actions != mdp.n_actions() {
        return Err(SolverError::Shape("policy and MDP disagree on dimensions".into()));
    }
    let gamma = mdp.gamma();
    // (I − γ P_πᵀ) d = (1 − γ) μ
    let mut lhs = DMatrix::<f64>::identity(ns, ns);
    for s in 0..ns {
        for (a, &pa) in policy.row(s).iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for &(n, p) in mdp.successors(s, a) {
                lhs[(n, s)] -= gamma * pa * p;
            }
        }
    }
    let rhs = DVector::from_iterator(ns, mdp.start_distribution().iter().map(|m| (1.0 - gamma) * m));
    let d = lhs.lu().solve(&rhs).ok_or(SolverError::Singular)?;
    Ok(d.iter().map(|x| x.max(0.0)).collect())
}

/// Start-distribution weighted exact return of `policy`.
pub fn expected_return(mdp: &FiniteMdp, policy: &StochasticPolicy) -> Result<f64, SolverError> {
    let (v, _) = evaluate_policy_exact(mdp, policy)?;
    Ok(mdp.weighted_by_start(&v.values))
}

/// Number of independent chunks used by Monte-Carlo estimators. Fixed so the
/// estimate does not depend on the worker count.
pub const MC_CHUNKS: u64 = 64;

/// Monte-Carlo estimate of the discounted return of `behavior` from the
/// start distribution.
pub fn monte_carlo_return<B: Behavior>(
    mdp: &FiniteMdp,
    behavior: &B,
    episodes: u64,
    horizon: usize,
    seed: u64,
) -> MeanEstimate {
    let parts: Vec<(u64, f64, f64)> = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let n = episodes / MC_CHUNKS + u64::from(c < episodes % MC_CHUNKS);
            let mut rng = seeded(derive_seed(seed, &[c]));
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..n {
                let g = episode_return(mdp, behavior, horizon, &mut rng);
                sum += g;
                sq += g * g;
            }
            (n, sum, sq)
        })
        .collect();
    MeanEstimate::from_moments(parts.iter().copied())
}
