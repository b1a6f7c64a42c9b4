//! Desk-scale laboratory for constrained randomization of a solved policy
//! (CRoP) as a defence against policy-imitation attacks.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`]: finite MDPs, benchmark builders, trajectories and rollouts.
//! - [`solver`]: value iteration, tabular Q-learning, greedy extraction and
//!   exact evaluation of stochastic policies.
//! - [`crop`]: candidate-action sets, the randomized policy and the
//!   ε-optimality checker.
//! - [`loss`]: expected-return decomposition and per-step loss bounds.
//! - [`budget`]: adversarial trajectory-collection budget, analytic and
//!   simulated.
//! - [`adversary`]: behavioural cloning, DAgger-style imitation and fidelity
//!   metrics.
//! - [`textfmt`]: plain-text tabular serialization of MDPs and value tables.

pub mod adversary;
pub mod budget;
pub mod crop;
pub mod loss;
pub mod mdp;
pub mod rng;
pub mod solver;
pub mod stats;
pub mod textfmt;

pub use adversary::{FidelityReport, ImitatorPolicy};
pub use budget::{BudgetModel, CollectionResult};
pub use crop::{CropConfig, CropPolicy, CropVariant, EpsOptimalityReport};
pub use loss::LossReport;
pub use mdp::{Behavior, DemoSet, FiniteMdp, Step, Trajectory};
pub use solver::{QTable, StochasticPolicy, VTable};
