//! Adversarial budget under an idealized trajectory-collection process.
//!
//! Each of the `T` steps of a trajectory is independently "optimal" with
//! probability `δ`, so a trajectory is a `T`-bit pattern with probability
//! `δ^{#optimal} (1 − δ)^{T − #optimal}`. The all-suboptimal pattern `τ_w` is
//! worthless; the adversary wants the other `2^T − 1`. Each pull draws a
//! pattern; an unseen desired one is collected, anything else is wasted.
//!
//! [`expected_trajectories_analytic`] evaluates the running-sum formula
//! `Σ_n 1 / (1 − P(τ_w) − Σ_{collected} P(τ_i))` along one fixed collection
//! order (decreasing probability, ties by ascending bit pattern).
//! [`expected_trajectories_exact`] averages the same sum over the random
//! order the process actually produces, and [`expected_trajectories_mc`]
//! simulates it. The fixed-order value coincides with the other two only
//! when all desired patterns are equally likely (`δ = 0.5`) or `T = 1`.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::mdp::{rollout_with, Behavior, FiniteMdp};
use crate::rng::{derive_seed, seeded};
use crate::stats::MeanEstimate;

/// Largest horizon for which the `2^T` patterns are enumerated.
pub const MAX_HORIZON: usize = 20;
/// Largest horizon for the exact order-averaged expectation (subset DP over
/// `2^(2^T − 1)` collected sets).
pub const MAX_EXACT_HORIZON: usize = 4;

const MC_CHUNKS: u64 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BudgetError {
    #[error("horizon {got} exceeds the enumeration cap of {cap}")]
    HorizonCap { got: usize, cap: usize },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("delta {0} outside (0, 1]")]
    Delta(f64),
    #[error("expected unique pairs k = {k} must lie in (0, T = {horizon}]")]
    UniquePairs { k: f64, horizon: usize },
    #[error("budget {0} must be finite and non-negative")]
    Budget(f64),
    #[error("fragment threshold t = {t} outside (0, k = {k})")]
    Threshold { t: f64, k: f64 },
    #[error("trials must be at least 1")]
    NoTrials,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetModel {
    /// Trajectory length `T`.
    pub horizon_t: usize,
    /// Per-step probability of an optimal pair.
    pub delta: f64,
    /// Expected number of unique pairs per trajectory, `k = E[n]`.
    pub k_expected_unique: f64,
    /// Adversary budget, in pulls or pairs.
    pub budget_b: f64,
}

impl BudgetModel {
    pub fn new(horizon_t: usize, delta: f64, k_expected_unique: f64, budget_b: f64) -> Result<Self, BudgetError> {
        if horizon_t == 0 {
            return Err(BudgetError::ZeroHorizon);
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(BudgetError::Delta(delta));
        }
        if !(k_expected_unique > 0.0 && k_expected_unique <= horizon_t as f64) {
            return Err(BudgetError::UniquePairs { k: k_expected_unique, horizon: horizon_t });
        }
        if !budget_b.is_finite() || budget_b < 0.0 {
            return Err(BudgetError::Budget(budget_b));
        }
        Ok(Self { horizon_t, delta, k_expected_unique, budget_b })
    }

    /// Model with `k = T` and no budget, for the collection ops.
    pub fn collection(horizon_t: usize, delta: f64) -> Result<Self, BudgetError> {
        Self::new(horizon_t, delta, horizon_t as f64, 0.0)
    }

    fn pattern_prob(&self, pattern: u32) -> f64 {
        let ones = pattern.count_ones() as i32;
        self.delta.powi(ones) * (1.0 - self.delta).powi(self.horizon_t as i32 - ones)
    }

    /// Desired patterns (all but 0) in the documented collection order,
    /// with their probabilities.
    pub fn collection_order(&self) -> Result<Vec<(u32, f64)>, BudgetError> {
        check_cap(self.horizon_t, MAX_HORIZON)?;
        let mut v: Vec<(u32, f64)> = (1..(1u32 << self.horizon_t)).map(|p| (p, self.pattern_prob(p))).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(v)
    }
}

fn check_cap(t: usize, cap: usize) -> Result<(), BudgetError> {
    if t == 0 {
        return Err(BudgetError::ZeroHorizon);
    }
    if t > cap {
        return Err(BudgetError::HorizonCap { got: t, cap });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectionResult {
    pub expected_pulls_analytic: f64,
    pub expected_pulls_mc: f64,
    pub mc_stderr: f64,
    pub trials: u64,
}

impl CollectionResult {
    pub fn agrees(&self, k_sigma: f64) -> bool {
        (self.expected_pulls_analytic - self.expected_pulls_mc).abs() <= k_sigma * self.mc_stderr
    }
}

/// Individual terms `1 / (1 − P(τ_w) − Σ_{i<n} P(τ_i))` of the fixed-order
/// running sum. The denominator equals the mass of the not-yet-collected
/// desired patterns and is computed as a suffix sum, smallest first.
pub fn collection_terms(model: &BudgetModel) -> Result<Vec<f64>, BudgetError> {
    let order = model.collection_order()?;
    let mut remaining = vec![0.0; order.len()];
    let mut acc = 0.0;
    for (i, (_, p)) in order.iter().enumerate().rev() {
        acc += p;
        remaining[i] = acc;
    }
    Ok(remaining.into_iter().map(|r| 1.0 / r).collect())
}

pub fn expected_trajectories_analytic(model: &BudgetModel) -> Result<f64, BudgetError> {
    Ok(collection_terms(model)?.iter().sum())
}

/// Expected pulls averaged over the random collection order. Dynamic program
/// over collected sets: `E(S) = (1 + Σ_{j∉S} p_j E(S ∪ {j})) / Σ_{j∉S} p_j`.
pub fn expected_trajectories_exact(model: &BudgetModel) -> Result<f64, BudgetError> {
    check_cap(model.horizon_t, MAX_EXACT_HORIZON)?;
    let probs: Vec<f64> = (1..(1u32 << model.horizon_t)).map(|p| model.pattern_prob(p)).collect();
    let m = probs.len();
    let full = (1usize << m) - 1;
    let mut e = vec![0.0; full + 1];
    for set in (0..full).rev() {
        let mut rem = 0.0;
        let mut acc = 1.0;
        for (j, &p) in probs.iter().enumerate() {
            if set & (1 << j) == 0 {
                rem += p;
                acc += p * e[set | (1 << j)];
            }
        }
        e[set] = acc / rem;
    }
    Ok(e[0])
}

fn simulate_collection<R: Rng + ?Sized>(cumulative: &[f64], seen: &mut [bool], rng: &mut R) -> u64 {
    seen.iter_mut().for_each(|s| *s = false);
    let mut missing = cumulative.len() - 1;
    let mut pulls = 0u64;
    while missing > 0 {
        pulls += 1;
        let u: f64 = rng.random::<f64>() * cumulative[cumulative.len() - 1];
        let pattern = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
        if pattern != 0 && !seen[pattern] {
            seen[pattern] = true;
            missing -= 1;
        }
    }
    pulls
}

/// Monte-Carlo simulation of the collection process.
pub fn expected_trajectories_mc(model: &BudgetModel, trials: u64, seed: u64) -> Result<CollectionResult, BudgetError> {
    if trials == 0 {
        return Err(BudgetError::NoTrials);
    }
    let analytic = expected_trajectories_analytic(model)?;
    let n_patterns = 1usize << model.horizon_t;
    let mut cumulative = Vec::with_capacity(n_patterns);
    let mut acc = 0.0;
    for p in 0..n_patterns as u32 {
        acc += model.pattern_prob(p);
        cumulative.push(acc);
    }
    let parts: Vec<(u64, f64, f64)> = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let n = trials / MC_CHUNKS + u64::from(c < trials % MC_CHUNKS);
            let mut rng = seeded(derive_seed(seed, &[c]));
            let mut seen = vec![false; n_patterns];
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..n {
                let x = simulate_collection(&cumulative, &mut seen, &mut rng) as f64;
                sum += x;
                sq += x * x;
            }
            (n, sum, sq)
        })
        .collect();
    let est = MeanEstimate::from_moments(parts.into_iter());
    Ok(CollectionResult {
        expected_pulls_analytic: analytic,
        expected_pulls_mc: est.mean,
        mc_stderr: est.stderr,
        trials,
    })
}

/// Largest `t` with `t / δ ≤ budget`: the expected number of optimal pairs
/// bought by `budget` pulls when each pull can be retried from the same state.
pub fn budget_to_optimal_pairs(delta: f64, budget_b: f64) -> Result<u64, BudgetError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(BudgetError::Delta(delta));
    }
    if !budget_b.is_finite() || budget_b < 0.0 {
        return Err(BudgetError::Budget(budget_b));
    }
    let mut t = (budget_b * delta).floor() as u64;
    while (t + 1) as f64 / delta <= budget_b {
        t += 1;
    }
    while t > 0 && t as f64 / delta > budget_b {
        t -= 1;
    }
    Ok(t)
}

/// Markov and reverse-Markov bounds on the fragment size `|τ̂|` for
/// `0 < t < k ≤ T`: `P(|τ̂| < t) ≥ 1 − k/t` and `P(|τ̂| ≤ t) ≤ (T − k)/(T − t)`,
/// each clamped to `[0, 1]`.
pub fn markov_fragment_bounds(horizon_t: usize, k: f64, t: f64) -> Result<(f64, f64), BudgetError> {
    let big_t = horizon_t as f64;
    if !(k > 0.0 && k <= big_t) {
        return Err(BudgetError::UniquePairs { k, horizon: horizon_t });
    }
    if !(t > 0.0 && t < k) {
        return Err(BudgetError::Threshold { t, k });
    }
    let lower = (1.0 - k / t).clamp(0.0, 1.0);
    let upper = ((big_t - k) / (big_t - t)).clamp(0.0, 1.0);
    Ok((lower, upper))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveHorizon {
    /// Mean number of unique `(s, a)` pairs per trajectory.
    pub k: f64,
    pub k_stderr: f64,
    /// `k` rounded up.
    pub k_ceil: usize,
    pub mean_length: f64,
    pub trials: usize,
}

/// Unique-pair count and length of each of `trials` rollouts.
pub fn fragment_samples<B: Behavior>(
    mdp: &FiniteMdp,
    behavior: &B,
    horizon_cap: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>, BudgetError> {
    if trials == 0 {
        return Err(BudgetError::NoTrials);
    }
    Ok((0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let t = rollout_with(mdp, behavior, horizon_cap, &mut seeded(derive_seed(seed, &[i])));
            (t.unique_pairs(), t.len())
        })
        .collect())
}

pub fn effective_horizon<B: Behavior>(
    mdp: &FiniteMdp,
    behavior: &B,
    horizon_cap: usize,
    trials: usize,
    seed: u64,
) -> Result<EffectiveHorizon, BudgetError> {
    let samples = fragment_samples(mdp, behavior, horizon_cap, trials, seed)?;
    let uniq: Vec<f64> = samples.iter().map(|s| s.0 as f64).collect();
    let est = MeanEstimate::from_samples(&uniq);
    let mean_length = samples.iter().map(|s| s.1 as f64).sum::<f64>() / trials as f64;
    Ok(EffectiveHorizon {
        k: est.mean,
        k_stderr: est.stderr,
        k_ceil: est.mean.ceil() as usize,
        mean_length,
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FragmentCheck {
    pub t: f64,
    pub lower: f64,
    pub upper: f64,
    /// Empirical `P(|τ̂| < t)`.
    pub p_below: f64,
    /// Empirical `P(|τ̂| ≤ t)`.
    pub p_at_most: f64,
}

impl FragmentCheck {
    pub fn holds(&self) -> bool {
        self.p_below >= self.lower - 1e-12 && self.p_at_most <= self.upper + 1e-12
    }
}

/// Compare the empirical fragment-size distribution against the clamped
/// bounds at `points` evenly spaced thresholds in `(0, k)`, with `k` the
/// sample mean.
pub fn check_fragment_bounds(sizes: &[usize], horizon_t: usize, points: usize) -> Result<Vec<FragmentCheck>, BudgetError> {
    if sizes.is_empty() {
        return Err(BudgetError::NoTrials);
    }
    let n = sizes.len() as f64;
    let k = sizes.iter().sum::<usize>() as f64 / n;
    (1..=points)
        .map(|i| {
            let t = k * i as f64 / (points + 1) as f64;
            let (lower, upper) = markov_fragment_bounds(horizon_t, k, t)?;
            let p_below = sizes.iter().filter(|&&x| (x as f64) < t).count() as f64 / n;
            let p_at_most = sizes.iter().filter(|&&x| (x as f64) <= t).count() as f64 / n;
            Ok(FragmentCheck { t, lower, upper, p_below, p_at_most })
        })
        .collect()
}
