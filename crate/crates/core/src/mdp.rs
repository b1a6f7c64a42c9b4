//! Finite MDPs, benchmark builders, trajectories and rollouts.
//!
//! Terminal states self-loop with reward 0 on every action, so infinite-horizon
//! values are well defined and an episode can simply stop on entry.

use rand::Rng;
use thiserror::Error;

use crate::crop::CropConfig;
use crate::rng::{sample_categorical, seeded};

/// Tolerance on transition-row and start-distribution normalisation.
pub const ROW_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("transition row ({state}, {action}) sums to {sum}, expected 1")]
    RowSum { state: usize, action: usize, sum: f64 },
    #[error("negative or non-finite probability at ({state}, {action}, {next})")]
    BadProbability { state: usize, action: usize, next: usize },
    #[error("reward {reward} at ({state}, {action}) outside [0, 1]")]
    RewardRange { state: usize, action: usize, reward: f64 },
    #[error("discount {0} outside [0, 1)")]
    Gamma(f64),
    #[error("terminal state {0} must self-loop with reward 0")]
    Terminal(usize),
    #[error("start distribution invalid: {0}")]
    Start(String),
    #[error("invalid builder parameter: {0}")]
    Parameter(String),
}

/// A finite MDP with a dense transition tensor `[state][action][next_state]`
/// and a reward table `[state][action]` bounded in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    terminal: Vec<bool>,
    start: Vec<f64>,
    // sparse view of `transition`, used for sampling
    successors: Vec<Vec<(usize, f64)>>,
}

impl FiniteMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        terminal: Vec<bool>,
        start: Vec<f64>,
    ) -> Result<Self, MdpError> {
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::Shape("state and action spaces must be non-empty".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(MdpError::Shape(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(MdpError::Shape(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if terminal.len() != n_states || start.len() != n_states {
            return Err(MdpError::Shape("terminal/start length must equal n_states".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(MdpError::Gamma(gamma));
        }
        let mut successors = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                let mut sum = 0.0;
                let mut succ = Vec::new();
                for (next, &p) in row.iter().enumerate() {
                    if !p.is_finite() || p < 0.0 {
                        return Err(MdpError::BadProbability { state: s, action: a, next });
                    }
                    if p > 0.0 {
                        succ.push((next, p));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > ROW_TOL {
                    return Err(MdpError::RowSum { state: s, action: a, sum });
                }
                let r = reward[s * n_actions + a];
                if !(0.0..=1.0).contains(&r) {
                    return Err(MdpError::RewardRange { state: s, action: a, reward: r });
                }
                if terminal[s] && ((row[s] - 1.0).abs() > ROW_TOL || r != 0.0) {
                    return Err(MdpError::Terminal(s));
                }
                successors.push(succ);
            }
        }
        validate_start(&start)?;
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            terminal,
            start,
            successors,
        })
    }

    pub fn with_start(mut self, start: Vec<f64>) -> Result<Self, MdpError> {
        if start.len() != self.n_states {
            return Err(MdpError::Shape("start length must equal n_states".into()));
        }
        validate_start(&start)?;
        self.start = start;
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[state * self.n_actions + action]
    }

    /// Distribution over next states for `(state, action)`.
    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        &self.transition[(state * self.n_actions + action) * self.n_states..][..self.n_states]
    }

    /// Non-zero entries of [`transition_row`](Self::transition_row).
    pub fn successors(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.successors[state * self.n_actions + action]
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    pub fn terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.terminal.iter().enumerate().filter(|(_, &t)| t).map(|(s, _)| s)
    }

    pub fn start_distribution(&self) -> &[f64] {
        &self.start
    }

    /// Upper end of the discounted-return range, `1 / (1 - gamma)`.
    pub fn value_bound(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.start, rng)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> usize {
        let succ = self.successors(state, action);
        if succ.len() == 1 {
            return succ[0].0;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(next, p) in succ {
            acc += p;
            if u < acc {
                return next;
            }
        }
        succ[succ.len() - 1].0
    }

    /// Start-distribution weighted average of a state-value vector.
    pub fn weighted_by_start(&self, values: &[f64]) -> f64 {
        self.start.iter().zip(values).map(|(p, v)| p * v).sum()
    }
}

fn validate_start(start: &[f64]) -> Result<(), MdpError> {
    if start.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(MdpError::Start("negative or non-finite entry".into()));
    }
    let sum: f64 = start.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(MdpError::Start(format!("sums to {sum}")));
    }
    Ok(())
}

// ── Builders ─────────────────────────────────────────────────────────────

/// Gridworld actions, in index order.
pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;

/// Parameters of a slippery gridworld. Cells are indexed `y * width + x`
/// with `y = 0` the top row. The intended move succeeds with probability
/// `1 - slip`; each of the two perpendicular moves gets `slip / 2`. Moves
/// into a wall leave the agent in place. The reward of `(s, a)` is the
/// expected reward of the landing cell: `goal_reward` on the goal, else
/// `step_reward`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gridworld {
    pub width: usize,
    pub height: usize,
    pub goal: usize,
    pub start: usize,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub slip: f64,
    pub gamma: f64,
}

impl Gridworld {
    /// 5×5, goal in the bottom-right corner, start top-left, slip 0.1, γ 0.9.
    pub fn canonical() -> Self {
        Self {
            width: 5,
            height: 5,
            goal: 24,
            start: 0,
            step_reward: 0.0,
            goal_reward: 1.0,
            slip: 0.1,
            gamma: 0.9,
        }
    }

    pub fn build(&self) -> Result<FiniteMdp, MdpError> {
        build_gridworld(self)
    }
}

pub fn build_gridworld(g: &Gridworld) -> Result<FiniteMdp, MdpError> {
    if g.width == 0 || g.height == 0 {
        return Err(MdpError::Parameter("grid must be non-empty".into()));
    }
    let n = g.width * g.height;
    if g.goal >= n {
        return Err(MdpError::Parameter(format!("goal {} outside {n}-cell grid", g.goal)));
    }
    if g.start >= n {
        return Err(MdpError::Parameter(format!("start {} outside {n}-cell grid", g.start)));
    }
    for (name, r) in [("step_reward", g.step_reward), ("goal_reward", g.goal_reward)] {
        if !(0.0..=1.0).contains(&r) {
            return Err(MdpError::Parameter(format!("{name} = {r} outside [0, 1]")));
        }
    }
    if !(0.0..1.0).contains(&g.slip) {
        return Err(MdpError::Parameter(format!("slip = {} outside [0, 1)", g.slip)));
    }
    if !(0.0..1.0).contains(&g.gamma) {
        return Err(MdpError::Gamma(g.gamma));
    }

    let n_actions = 4;
    let step = |cell: usize, dir: usize| -> usize {
        let (x, y) = (cell % g.width, cell / g.width);
        match dir {
            UP if y > 0 => cell - g.width,
            RIGHT if x + 1 < g.width => cell + 1,
            DOWN if y + 1 < g.height => cell + g.width,
            LEFT if x > 0 => cell - 1,
            _ => cell,
        }
    };
    let mut transition = vec![0.0; n * n_actions * n];
    let mut reward = vec![0.0; n * n_actions];
    for s in 0..n {
        for a in 0..n_actions {
            let row = &mut transition[(s * n_actions + a) * n..][..n];
            if s == g.goal {
                row[s] = 1.0;
                continue;
            }
            let lateral = [(a + 1) % 4, (a + 3) % 4];
            row[step(s, a)] += 1.0 - g.slip;
            for d in lateral {
                row[step(s, d)] += g.slip / 2.0;
            }
            reward[s * n_actions + a] = row
                .iter()
                .enumerate()
                .map(|(next, p)| p * if next == g.goal { g.goal_reward } else { g.step_reward })
                .sum::<f64>()
                .clamp(0.0, 1.0);
        }
    }
    let mut terminal = vec![false; n];
    terminal[g.goal] = true;
    let mut start = vec![0.0; n];
    start[g.start] = 1.0;
    FiniteMdp::new(n, n_actions, transition, reward, g.gamma, terminal, start)
}

/// Chain actions.
pub const ADVANCE: usize = 0;
pub const STAY: usize = 1;

/// Linear chain `0 → 1 → … → n-1` with `n-1` terminal. `ADVANCE` moves one
/// state right, `STAY` self-loops. Reward 1 on entering the terminal state.
pub fn build_chain(n: usize, gamma: f64) -> Result<FiniteMdp, MdpError> {
    if n < 2 {
        return Err(MdpError::Parameter(format!("chain needs n >= 2, got {n}")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(MdpError::Gamma(gamma));
    }
    let n_actions = 2;
    let mut transition = vec![0.0; n * n_actions * n];
    let mut reward = vec![0.0; n * n_actions];
    for s in 0..n {
        let last = s == n - 1;
        let adv = if last { s } else { s + 1 };
        transition[(s * n_actions + ADVANCE) * n + adv] = 1.0;
        transition[(s * n_actions + STAY) * n + s] = 1.0;
        if s + 2 == n {
            reward[s * n_actions + ADVANCE] = 1.0;
        }
    }
    let mut terminal = vec![false; n];
    terminal[n - 1] = true;
    let mut start = vec![0.0; n];
    start[0] = 1.0;
    FiniteMdp::new(n, n_actions, transition, reward, gamma, terminal, start)
}

// ── Trajectories ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// A chain of `(s, a, r, s')` steps of length at most `horizon_cap`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub horizon_cap: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_chained(&self) -> bool {
        self.steps.windows(2).all(|w| w[0].next_state == w[1].state)
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut g = 0.0;
        let mut disc = 1.0;
        for st in &self.steps {
            g += disc * st.reward;
            disc *= gamma;
        }
        g
    }

    /// Number of distinct `(state, action)` pairs in the trajectory.
    pub fn unique_pairs(&self) -> usize {
        let mut pairs: Vec<(usize, usize)> = self.steps.iter().map(|s| (s.state, s.action)).collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs.len()
    }
}

/// Where a demonstration set came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceLabel {
    pub target: String,
    pub crop: Option<CropConfig>,
    pub seed: u64,
}

/// Demonstrations observed by the adversary.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub trajectories: Vec<Trajectory>,
    pub source: SourceLabel,
}

impl DemoSet {
    pub fn n_pairs(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.trajectories.iter().flat_map(|t| t.steps.iter().map(|s| (s.state, s.action)))
    }
}

// ── Rollouts ─────────────────────────────────────────────────────────────

/// Anything that picks actions: a Markov table, or a rule that also looks at
/// the previous state. `prev` is `None` on the first step of an episode.
pub trait Behavior: Sync {
    fn n_actions(&self) -> usize;

    fn action_probs(&self, prev: Option<usize>, state: usize, out: &mut [f64]);

    fn sample_action<R: Rng + ?Sized>(&self, prev: Option<usize>, state: usize, rng: &mut R) -> usize {
        let mut buf = vec![0.0; self.n_actions()];
        self.action_probs(prev, state, &mut buf);
        sample_categorical(&buf, rng)
    }
}

/// Roll out `behavior` from a start state until a terminal state is entered
/// or `horizon` steps have been taken.
pub fn rollout<B: Behavior>(mdp: &FiniteMdp, behavior: &B, horizon: usize, seed: u64) -> Trajectory {
    rollout_with(mdp, behavior, horizon, &mut seeded(seed))
}

pub fn rollout_with<B: Behavior, R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    behavior: &B,
    horizon: usize,
    rng: &mut R,
) -> Trajectory {
    let mut steps = Vec::new();
    let mut state = mdp.sample_start(rng);
    let mut prev = None;
    while steps.len() < horizon && !mdp.is_terminal(state) {
        let action = behavior.sample_action(prev, state, rng);
        let next_state = mdp.sample_next(state, action, rng);
        steps.push(Step { state, action, reward: mdp.reward(state, action), next_state });
        prev = Some(state);
        state = next_state;
    }
    Trajectory { steps, horizon_cap: horizon }
}

/// Discounted return of one episode, without materialising the trajectory.
pub fn episode_return<B: Behavior, R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    behavior: &B,
    horizon: usize,
    rng: &mut R,
) -> f64 {
    let mut state = mdp.sample_start(rng);
    let mut prev = None;
    let (mut g, mut disc) = (0.0, 1.0);
    for _ in 0..horizon {
        if mdp.is_terminal(state) {
            break;
        }
        let action = behavior.sample_action(prev, state, rng);
        g += disc * mdp.reward(state, action);
        disc *= mdp.gamma();
        prev = Some(state);
        state = mdp.sample_next(state, action, rng);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::StochasticPolicy;

    fn two_cell() -> FiniteMdp {
        Gridworld {
            width: 2,
            height: 1,
            goal: 1,
            start: 0,
            step_reward: 0.0,
            goal_reward: 1.0,
            slip: 0.0,
            gamma: 0.9,
        }
        .build()
        .unwrap()
    }

    #[test]
    fn two_cell_grid_shape() {
        let mdp = two_cell();
        assert_eq!(mdp.n_states(), 2);
        assert!(mdp.is_terminal(1));
        assert_eq!(mdp.reward(0, RIGHT), 1.0);
        assert_eq!(mdp.reward(0, LEFT), 0.0);
        assert_eq!(mdp.transition_row(0, UP), &[1.0, 0.0]);
    }

    #[test]
    fn slippery_rows_normalised() {
        let mut g = Gridworld::canonical();
        g.slip = 0.1;
        let mdp = g.build().unwrap();
        for s in 0..mdp.n_states() {
            for a in 0..4 {
                let sum: f64 = mdp.transition_row(s, a).iter().sum();
                assert!((sum - 1.0).abs() <= 1e-9);
            }
        }
        // interior cell 12, action RIGHT: 0.9 to 13, 0.05 to 7 and 17
        let row = mdp.transition_row(12, RIGHT);
        assert!((row[13] - 0.9).abs() < 1e-15);
        assert!((row[7] - 0.05).abs() < 1e-15);
        assert!((row[17] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn gridworld_rejects_bad_parameters() {
        let mut g = Gridworld::canonical();
        g.goal_reward = 1.5;
        assert!(matches!(g.build(), Err(MdpError::Parameter(_))));
        let mut g = Gridworld::canonical();
        g.gamma = 1.0;
        assert_eq!(g.build(), Err(MdpError::Gamma(1.0)));
        let mut g = Gridworld::canonical();
        g.goal = 25;
        assert!(g.build().is_err());
        let mut g = Gridworld::canonical();
        g.slip = 1.0;
        assert!(g.build().is_err());
    }

    #[test]
    fn chain_structure() {
        assert!(build_chain(1, 0.9).is_err());
        let mdp = build_chain(2, 0.9).unwrap();
        assert_eq!(mdp.terminal_states().collect::<Vec<_>>(), vec![1]);
        assert_eq!(mdp.reward(0, ADVANCE), 1.0);
        let mdp = build_chain(5, 0.9).unwrap();
        assert_eq!(mdp.reward(3, ADVANCE), 1.0);
        assert_eq!(mdp.reward(2, ADVANCE), 0.0);
        assert_eq!(mdp.transition_row(2, STAY)[2], 1.0);
    }

    #[test]
    fn constructor_rejects_invalid_tables() {
        // reward outside [0,1]
        let r = FiniteMdp::new(1, 1, vec![1.0], vec![1.5], 0.5, vec![false], vec![1.0]);
        assert!(matches!(r, Err(MdpError::RewardRange { .. })));
        // row does not sum to one
        let r = FiniteMdp::new(2, 1, vec![0.5, 0.4, 0.0, 1.0], vec![0.0, 0.0], 0.5, vec![false, false], vec![1.0, 0.0]);
        assert!(matches!(r, Err(MdpError::RowSum { state: 0, .. })));
        // terminal with non-zero reward
        let r = FiniteMdp::new(1, 1, vec![1.0], vec![0.2], 0.5, vec![true], vec![1.0]);
        assert_eq!(r, Err(MdpError::Terminal(0)));
        // gamma
        let r = FiniteMdp::new(1, 1, vec![1.0], vec![0.0], 1.0, vec![false], vec![1.0]);
        assert_eq!(r, Err(MdpError::Gamma(1.0)));
    }

    #[test]
    fn deterministic_rollout_is_seed_independent() {
        let mdp = build_chain(5, 0.9).unwrap();
        let pi = StochasticPolicy::from_actions(&[ADVANCE; 5], 2);
        let a = rollout(&mdp, &pi, 20, 1);
        let b = rollout(&mdp, &pi, 20, 999);
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.is_chained());
        assert_eq!(a.unique_pairs(), 4);
    }

    #[test]
    fn rollout_respects_horizon_and_seed() {
        let mdp = Gridworld::canonical().build().unwrap();
        let pi = StochasticPolicy::uniform(mdp.n_states(), 4);
        for seed in 0..20 {
            let t = rollout(&mdp, &pi, 15, seed);
            assert!(t.len() <= 15);
            assert!(t.is_chained());
            assert_eq!(t, rollout(&mdp, &pi, 15, seed));
        }
    }
}
