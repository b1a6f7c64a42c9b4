//! Constrained randomization of a solved policy.
//!
//! Given a base value table, the base policy `π(s)` is the greedy action. At
//! each step the randomized policy `f` plays `π(s)` with probability `δ`, and
//! otherwise a uniformly drawn candidate from `Â(s)`, the set of actions other
//! than `π(s)` that pass the variant's threshold test:
//!
//! | variant     | candidate `â ≠ π(s)` when                 |
//! |-------------|-------------------------------------------|
//! | `QDiff`     | `Q(s, π(s)) − Q(s, â) < ρ`                |
//! | `ADiff`     | `Q(s, â) − V(s_prev) > −ρ`                |
//! | `APlusDiff` | `Q(s, â) − V(s_prev) ≥ 0`                 |
//!
//! If `Â(s)` is empty, `f` plays `π(s)` with certainty.
//!
//! The two advantage variants look one step back. On the first step of an
//! episode there is no previous state and the current state stands in for it,
//! which keeps `f` Markov on the pair `(prev_state, state)`. Exact evaluation
//! of those variants therefore runs on the augmented pair-state chain built by
//! [`augmented_model`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::mdp::{Behavior, FiniteMdp, MdpError};
use crate::solver::{argmax, QTable, SolverError, StochasticPolicy, VTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CropError {
    #[error("delta {0} outside [0, 1]")]
    Delta(f64),
    #[error("rho {0} must be finite and non-negative")]
    Rho(f64),
    #[error("unknown CRoP variant {0:?} (expected qdiff, adiff or aplusdiff)")]
    UnknownVariant(String),
    #[error("{0} depends on the previous state; evaluate it on the augmented model")]
    HistoryDependent(CropVariant),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CropVariant {
    QDiff,
    ADiff,
    APlusDiff,
}

impl CropVariant {
    pub const ALL: [CropVariant; 3] = [CropVariant::QDiff, CropVariant::ADiff, CropVariant::APlusDiff];

    pub fn as_str(self) -> &'static str {
        match self {
            CropVariant::QDiff => "qdiff",
            CropVariant::ADiff => "adiff",
            CropVariant::APlusDiff => "aplusdiff",
        }
    }

    /// Whether the candidate test reads the previous state's value.
    pub fn is_history_dependent(self) -> bool {
        !matches!(self, CropVariant::QDiff)
    }
}

impl fmt::Display for CropVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CropVariant {
    type Err = CropError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "qdiff" => Ok(CropVariant::QDiff),
            "adiff" => Ok(CropVariant::ADiff),
            "aplusdiff" => Ok(CropVariant::APlusDiff),
            other => Err(CropError::UnknownVariant(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropConfig {
    /// Probability of playing `π(s)`.
    pub delta: f64,
    /// Loss threshold.
    pub rho: f64,
    pub variant: CropVariant,
}

impl CropConfig {
    pub fn new(delta: f64, rho: f64, variant: CropVariant) -> Result<Self, CropError> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(CropError::Delta(delta));
        }
        if !rho.is_finite() || rho < 0.0 {
            return Err(CropError::Rho(rho));
        }
        Ok(Self { delta, rho, variant })
    }
}

/// Candidate actions `Â(s)` for `state`. `prev_state` is `None` on the first
/// step, where the state is its own predecessor.
pub fn candidate_set(
    state: usize,
    prev_state: Option<usize>,
    q: &QTable,
    v: &VTable,
    config: &CropConfig,
) -> Vec<usize> {
    let row = q.row(state);
    let best = argmax(row);
    let baseline = v.get(prev_state.unwrap_or(state));
    (0..row.len())
        .filter(|&a| a != best)
        .filter(|&a| match config.variant {
            CropVariant::QDiff => row[best] - row[a] < config.rho,
            CropVariant::ADiff => row[a] - baseline > -config.rho,
            CropVariant::APlusDiff => row[a] - baseline >= 0.0,
        })
        .collect()
}

/// The randomized policy `f` with its candidate sets precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct CropPolicy {
    config: CropConfig,
    base_q: QTable,
    base_v: VTable,
    base_actions: Vec<usize>,
    // indexed by `context(prev, state)`
    candidate_cache: Vec<Vec<usize>>,
}

impl CropPolicy {
    pub fn new(config: CropConfig, base_q: QTable, base_v: VTable) -> Result<Self, CropError> {
        let n = base_q.n_states();
        if base_v.len() != n {
            return Err(CropError::Shape(format!("Q has {n} states, V has {}", base_v.len())));
        }
        let base_actions = (0..n).map(|s| argmax(base_q.row(s))).collect();
        let candidate_cache = if config.variant.is_history_dependent() {
            (0..n * n)
                .map(|c| candidate_set(c % n, Some(c / n), &base_q, &base_v, &config))
                .collect()
        } else {
            (0..n).map(|s| candidate_set(s, None, &base_q, &base_v, &config)).collect()
        };
        Ok(Self { config, base_q, base_v, base_actions, candidate_cache })
    }

    /// Convenience constructor using `V = max_a Q`.
    pub fn from_q(config: CropConfig, base_q: QTable) -> Result<Self, CropError> {
        let v = base_q.state_values();
        Self::new(config, base_q, v)
    }

    pub fn config(&self) -> &CropConfig {
        &self.config
    }

    pub fn base_q(&self) -> &QTable {
        &self.base_q
    }

    pub fn base_v(&self) -> &VTable {
        &self.base_v
    }

    pub fn n_states(&self) -> usize {
        self.base_q.n_states()
    }

    /// `π(s)`.
    pub fn base_action(&self, state: usize) -> usize {
        self.base_actions[state]
    }

    pub fn base_policy(&self) -> StochasticPolicy {
        StochasticPolicy::from_actions(&self.base_actions, self.base_q.n_actions())
    }

    /// Number of decision contexts: states for `QDiff`, ordered
    /// `(prev_state, state)` pairs otherwise.
    pub fn n_contexts(&self) -> usize {
        self.candidate_cache.len()
    }

    pub fn context(&self, prev_state: Option<usize>, state: usize) -> usize {
        if self.config.variant.is_history_dependent() {
            prev_state.unwrap_or(state) * self.n_states() + state
        } else {
            state
        }
    }

    /// State component of a context index.
    pub fn context_state(&self, context: usize) -> usize {
        context % self.n_states()
    }

    pub fn candidates(&self, prev_state: Option<usize>, state: usize) -> &[usize] {
        &self.candidate_cache[self.context(prev_state, state)]
    }

    pub fn candidates_in_context(&self, context: usize) -> &[usize] {
        &self.candidate_cache[context]
    }

    fn distribution_into(&self, context: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|p| *p = 0.0);
        let state = self.context_state(context);
        let cands = &self.candidate_cache[context];
        let best = self.base_actions[state];
        if cands.is_empty() {
            out[best] = 1.0;
            return;
        }
        out[best] = self.config.delta;
        let share = (1.0 - self.config.delta) / cands.len() as f64;
        for &a in cands {
            out[a] = share;
        }
    }

    /// Mean base-Q value of the candidates in `context`, if any.
    pub fn candidate_mean_q(&self, context: usize) -> Option<f64> {
        let cands = &self.candidate_cache[context];
        if cands.is_empty() {
            return None;
        }
        let s = self.context_state(context);
        Some(cands.iter().map(|&a| self.base_q.get(s, a)).sum::<f64>() / cands.len() as f64)
    }

    /// Per-context count of candidate sets that differ from `other`'s. Used
    /// to surface how estimation error in a learned table moves `Â`.
    pub fn candidate_discrepancy(&self, other: &CropPolicy) -> Result<CandidateDiscrepancy, CropError> {
        if self.n_contexts() != other.n_contexts() {
            return Err(CropError::Shape("policies have different context spaces".into()));
        }
        let mut d = CandidateDiscrepancy::default();
        for (a, b) in self.candidate_cache.iter().zip(&other.candidate_cache) {
            let only_a = a.iter().filter(|x| !b.contains(x)).count();
            let only_b = b.iter().filter(|x| !a.contains(x)).count();
            if only_a + only_b > 0 {
                d.contexts_differing += 1;
                d.symmetric_difference += only_a + only_b;
            }
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CandidateDiscrepancy {
    pub contexts_differing: usize,
    pub symmetric_difference: usize,
}

/// Action distribution of `f` at `state`.
pub fn crop_action_distribution(state: usize, prev_state: Option<usize>, policy: &CropPolicy) -> Vec<f64> {
    let mut out = vec![0.0; policy.base_q.n_actions()];
    policy.distribution_into(policy.context(prev_state, state), &mut out);
    out
}

/// Sample one action of `f`. The flag is set when the emitted action is not
/// `π(s)`.
pub fn crop_act<R: Rng + ?Sized>(
    state: usize,
    prev_state: Option<usize>,
    policy: &CropPolicy,
    rng: &mut R,
) -> (usize, bool) {
    let best = policy.base_actions[state];
    let cands = policy.candidates(prev_state, state);
    if cands.is_empty() || rng.random::<f64>() < policy.config.delta {
        return (best, false);
    }
    (cands[rng.random_range(0..cands.len())], true)
}

impl Behavior for CropPolicy {
    fn n_actions(&self) -> usize {
        self.base_q.n_actions()
    }

    fn action_probs(&self, prev: Option<usize>, state: usize, out: &mut [f64]) {
        self.distribution_into(self.context(prev, state), out);
    }

    fn sample_action<R: Rng + ?Sized>(&self, prev: Option<usize>, state: usize, rng: &mut R) -> usize {
        crop_act(state, prev, self, rng).0
    }
}

/// Full per-state table of `f`. Only `QDiff` is Markov in the state alone.
pub fn crop_stochastic_policy(policy: &CropPolicy) -> Result<StochasticPolicy, CropError> {
    if policy.config.variant.is_history_dependent() {
        return Err(CropError::HistoryDependent(policy.config.variant));
    }
    let (n, na) = (policy.n_states(), policy.base_q.n_actions());
    let mut dist = vec![0.0; n * na];
    for s in 0..n {
        policy.distribution_into(s, &mut dist[s * na..][..na]);
    }
    Ok(StochasticPolicy::new(n, na, dist)?)
}

/// Pair-state chain on which a history-dependent `f` is Markov.
///
/// State `p * n + s` means "currently in `s`, previously in `p`". Episodes
/// start in `(s, s)`. Pairs whose current state is terminal self-loop with
/// reward 0. Returns the augmented MDP together with `f`'s table on it.
pub fn augmented_model(mdp: &FiniteMdp, policy: &CropPolicy) -> Result<(FiniteMdp, StochasticPolicy), CropError> {
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    if policy.n_states() != n || policy.base_q.n_actions() != na {
        return Err(CropError::Shape("policy and MDP disagree on dimensions".into()));
    }
    let m = n * n;
    let mut transition = vec![0.0; m * na * m];
    let mut reward = vec![0.0; m * na];
    let mut terminal = vec![false; m];
    let mut start = vec![0.0; m];
    let mut dist = vec![0.0; m * na];
    for p in 0..n {
        for s in 0..n {
            let c = p * n + s;
            terminal[c] = mdp.is_terminal(s);
            for a in 0..na {
                let row = &mut transition[(c * na + a) * m..][..m];
                if terminal[c] {
                    row[c] = 1.0;
                    continue;
                }
                for &(next, pr) in mdp.successors(s, a) {
                    row[s * n + next] += pr;
                }
                reward[c * na + a] = mdp.reward(s, a);
            }
            let ctx = if policy.config.variant.is_history_dependent() { c } else { s };
            policy.distribution_into(ctx, &mut dist[c * na..][..na]);
        }
        start[p * n + p] = mdp.start_distribution()[p];
    }
    let aug = FiniteMdp::new(m, na, transition, reward, mdp.gamma(), terminal, start)?;
    let table = StochasticPolicy::new(m, na, dist)?;
    Ok((aug, table))
}

// ── ε-optimality check ───────────────────────────────────────────────────

/// Slack on the pairwise bound comparison, absorbing rounding in
/// `(a − b) + (b − c)` versus `a − c`.
pub const THEOREM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsOptimalityReport {
    /// Measured `max (Q* − Q^π)`, floored at 0.
    pub eps_prime: f64,
    /// Measured `max |Q^π − Q^π′|`.
    pub eps: f64,
    pub eps_used: f64,
    pub eps_prime_used: f64,
    /// Fraction of pairs with `Q* − Q^π′ ≤ ε + ε′`.
    pub bound_satisfied_fraction: f64,
    pub checked_pairs: usize,
    pub confidence: f64,
    pub meets_confidence: bool,
}

/// Check `Q* − Q^π′ ≤ ε + ε′` pairwise over three tables on the same grid.
pub fn check_theorem1(
    q_star: &QTable,
    q_pi: &QTable,
    q_pi_prime: &QTable,
    eps: f64,
    eps_prime: f64,
    confidence: f64,
) -> Result<EpsOptimalityReport, CropError> {
    if !q_star.same_shape(q_pi) || !q_star.same_shape(q_pi_prime) {
        return Err(CropError::Shape("Q tables must share the (state, action) grid".into()));
    }
    let bound = eps + eps_prime;
    let mut measured_eps_prime = 0.0f64;
    let mut measured_eps = 0.0f64;
    let mut ok = 0usize;
    let pairs = q_star.values().len();
    for ((&star, &pi), &prime) in q_star.values().iter().zip(q_pi.values()).zip(q_pi_prime.values()) {
        measured_eps_prime = measured_eps_prime.max(star - pi);
        measured_eps = measured_eps.max((pi - prime).abs());
        if star - prime <= bound + THEOREM_TOL {
            ok += 1;
        }
    }
    let fraction = if pairs == 0 { 1.0 } else { ok as f64 / pairs as f64 };
    Ok(EpsOptimalityReport {
        eps_prime: measured_eps_prime,
        eps: measured_eps,
        eps_used: eps,
        eps_prime_used: eps_prime,
        bound_satisfied_fraction: fraction,
        checked_pairs: pairs,
        confidence,
        meets_confidence: fraction >= confidence,
    })
}
