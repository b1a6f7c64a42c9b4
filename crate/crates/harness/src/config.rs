//! Experiment configuration: flat `key = value` lines grouped under
//! `[section]` headers.
//!
//! Grammar:
//!
//! ```text
//! file    := line*
//! line    := blank | comment | header | entry
//! comment := '#' any*
//! header  := '[' name ']'
//! entry   := key '=' value ( '#' any* )?
//! value   := item ( ',' item )*
//! ```
//!
//! Keys are unique within a section and every entry must follow a header.
//! Errors report the 1-based line they come from. See `docs/formats.md` for
//! the recognised sections and keys.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crop_core::adversary::{Attacker, Deployment};
use crop_core::budget::MAX_HORIZON;
use crop_core::crop::CropVariant;
use crop_core::mdp::{build_chain, FiniteMdp, Gridworld};
use crop_core::solver::LrSchedule;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("missing key `{key}` in section [{section}]")]
    Missing { section: String, key: String },
}

fn at(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Line { line, message: message.into() }
}

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
    used: bool,
}

/// Raw sections, with line numbers kept for error reporting.
#[derive(Debug, Default)]
struct Raw {
    sections: BTreeMap<String, (usize, BTreeMap<String, Entry>)>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = Raw::default();
        let mut current: Option<String> = None;
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let line = match line.find('#') {
                Some(p) => &line[..p],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| at(n, "unterminated section header"))?
                    .trim()
                    .to_ascii_lowercase();
                if name.is_empty() {
                    return Err(at(n, "empty section name"));
                }
                if raw.sections.contains_key(&name) {
                    return Err(at(n, format!("duplicate section [{name}]")));
                }
                raw.sections.insert(name.clone(), (n, BTreeMap::new()));
                current = Some(name);
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| at(n, "expected `key = value`"))?;
            let key = key.trim().to_ascii_lowercase();
            if key.is_empty() {
                return Err(at(n, "empty key"));
            }
            let section = current.as_ref().ok_or_else(|| at(n, "entry before any [section] header"))?;
            let entries = &mut raw.sections.get_mut(section).expect("inserted on header").1;
            if entries.contains_key(&key) {
                return Err(at(n, format!("duplicate key `{key}` in [{section}]")));
            }
            entries.insert(key, Entry { line: n, value: value.trim().to_string(), used: false });
        }
        Ok(raw)
    }

    fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        let entry = self.sections.get_mut(section)?.1.get_mut(key)?;
        entry.used = true;
        Some((entry.line, entry.value.clone()))
    }

    fn require(&mut self, section: &str, key: &str) -> Result<(usize, String), ConfigError> {
        self.take(section, key)
            .ok_or_else(|| ConfigError::Missing { section: section.into(), key: key.into() })
    }

    fn parse_as<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
        value
            .parse()
            .map_err(|_| at(line, format!("cannot parse `{key}` from {value:?}")))
    }

    fn get<T: FromStr>(&mut self, section: &str, key: &str) -> Result<(usize, T), ConfigError> {
        let (line, v) = self.require(section, key)?;
        Ok((line, Self::parse_as(line, key, &v)?))
    }

    fn get_or<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<(usize, T), ConfigError> {
        match self.take(section, key) {
            Some((line, v)) => Ok((line, Self::parse_as(line, key, &v)?)),
            None => Ok((0, default)),
        }
    }

    fn list<T: FromStr>(&mut self, section: &str, key: &str) -> Result<(usize, Vec<T>), ConfigError> {
        let (line, v) = self.require(section, key)?;
        let items = v
            .split(',')
            .map(|item| Self::parse_as(line, key, item.trim()))
            .collect::<Result<Vec<T>, _>>()?;
        if items.is_empty() || v.trim().is_empty() {
            return Err(at(line, format!("`{key}` must list at least one value")));
        }
        Ok((line, items))
    }

    fn list_or<T: FromStr + Clone>(&mut self, section: &str, key: &str, default: &[T]) -> Result<(usize, Vec<T>), ConfigError> {
        if self.sections.get(section).is_some_and(|s| s.1.contains_key(key)) {
            self.list(section, key)
        } else {
            Ok((0, default.to_vec()))
        }
    }

    fn reject_unused(&self) -> Result<(), ConfigError> {
        for (name, (_, entries)) in &self.sections {
            if let Some((key, e)) = entries.iter().find(|(_, e)| !e.used) {
                return Err(at(e.line, format!("unknown key `{key}` in [{name}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MdpSpec {
    Gridworld(Gridworld),
    Chain { n: usize, gamma: f64 },
}

impl MdpSpec {
    pub fn build(&self) -> Result<FiniteMdp, crop_core::mdp::MdpError> {
        match self {
            MdpSpec::Gridworld(g) => g.build(),
            MdpSpec::Chain { n, gamma } => build_chain(*n, *gamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverSpec {
    ValueIteration { tol: f64, max_iters: usize },
    QLearning { episodes: usize, horizon: usize, lr: LrSchedule, explore: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropGrid {
    pub deltas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub variants: Vec<CropVariant>,
    /// Test-time episodes per cell for diversion counts.
    pub episodes: usize,
    pub horizon: usize,
    /// `N` of the loss bound.
    pub loss_horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarySettings {
    pub attacker: Attacker,
    pub deployment: Deployment,
    pub deltas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub variants: Vec<CropVariant>,
    pub batch: usize,
    pub threshold: f64,
    pub trials: usize,
    pub max_samples: usize,
    pub horizon: usize,
    pub smoothing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSettings {
    pub horizons: Vec<usize>,
    pub deltas: Vec<f64>,
    pub mc_trials: u64,
    /// Pull budgets for the optimal-pairs table.
    pub budgets: Vec<f64>,
    /// Rollouts for the fragment-size distribution.
    pub fragment_trials: usize,
    /// Trajectory horizon used for fragment sizes.
    pub fragment_horizon: usize,
    pub fragment_delta: f64,
    pub fragment_rho: f64,
    pub fragment_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mdp: MdpSpec,
    pub solver: SolverSpec,
    pub crop: CropGrid,
    pub adversary: AdversarySettings,
    pub budget: BudgetSettings,
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn check(cond: bool, line: usize, message: impl Into<String>) -> Result<(), ConfigError> {
    if cond {
        Ok(())
    } else {
        Err(at(line, message))
    }
}

fn check_unit_list(line: usize, key: &str, xs: &[f64]) -> Result<(), ConfigError> {
    check(xs.iter().all(|x| (0.0..=1.0).contains(x)), line, format!("`{key}` values must lie in [0, 1]"))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = Raw::parse(text)?;

        let (line, builder) = raw.require("mdp", "builder")?;
        let (gl, gamma) = raw.get::<f64>("mdp", "gamma")?;
        check((0.0..1.0).contains(&gamma), gl, format!("gamma {gamma} must lie in [0, 1)"))?;
        let mdp = match builder.to_ascii_lowercase().as_str() {
            "gridworld" => {
                let c = Gridworld::canonical();
                let width = raw.get_or("mdp", "width", c.width)?.1;
                let height = raw.get_or("mdp", "height", c.height)?.1;
                let goal = raw.get_or("mdp", "goal", width * height - 1)?.1;
                let start = raw.get_or("mdp", "start", c.start)?.1;
                let step_reward = raw.get_or("mdp", "step_reward", c.step_reward)?.1;
                let goal_reward = raw.get_or("mdp", "goal_reward", c.goal_reward)?.1;
                let (sl, slip) = raw.get_or("mdp", "slip", c.slip)?;
                check((0.0..=1.0).contains(&slip), sl, "slip must lie in [0, 1]")?;
                MdpSpec::Gridworld(Gridworld { width, height, goal, start, step_reward, goal_reward, slip, gamma })
            }
            "chain" => {
                let (nl, n) = raw.get::<usize>("mdp", "n")?;
                check(n >= 2, nl, "chain needs at least 2 states")?;
                MdpSpec::Chain { n, gamma }
            }
            other => return Err(at(line, format!("unknown builder {other:?} (gridworld | chain)"))),
        };
        if let Err(e) = mdp.build() {
            return Err(at(line, format!("invalid MDP: {e}")));
        }

        let (line, method) = raw.take("solver", "method").unwrap_or((0, "value_iteration".into()));
        let solver = match method.as_str() {
            "value_iteration" => {
                let (tl, tol) = raw.get_or("solver", "tol", 1e-10)?;
                check(tol > 0.0, tl, "tol must be positive")?;
                let max_iters = raw.get_or("solver", "max_iters", 10_000usize)?.1;
                SolverSpec::ValueIteration { tol, max_iters }
            }
            "q_learning" => {
                let (el, episodes) = raw.get::<usize>("solver", "episodes")?;
                check(episodes > 0, el, "episodes must be positive")?;
                let horizon = raw.get_or("solver", "horizon", 100usize)?.1;
                let (ll, lr) = raw.take("solver", "lr").unwrap_or((0, "polynomial:0.6".into()));
                let lr = parse_lr(&lr).ok_or_else(|| at(ll, format!("bad lr {lr:?} (constant:A | polynomial:P)")))?;
                let (xl, explore) = raw.get_or("solver", "explore", 0.2)?;
                check((0.0..=1.0).contains(&explore), xl, "explore must lie in [0, 1]")?;
                SolverSpec::QLearning { episodes, horizon, lr, explore }
            }
            other => return Err(at(line, format!("unknown solver method {other:?}"))),
        };

        let (dl, deltas) = raw.list::<f64>("crop", "delta")?;
        check_unit_list(dl, "delta", &deltas)?;
        let (rl, rhos) = raw.list::<f64>("crop", "rho")?;
        check(rhos.iter().all(|r| *r >= 0.0 && r.is_finite()), rl, "rho values must be >= 0")?;
        let variants = raw.list_or::<CropVariant>("crop", "variant", &[CropVariant::QDiff])?.1;
        let (el, episodes) = raw.get_or("crop", "episodes", 10usize)?;
        check(episodes > 0, el, "episodes must be positive")?;
        let (hl, horizon) = raw.get_or("crop", "horizon", 100usize)?;
        check(horizon > 0, hl, "horizon must be positive")?;
        let loss_horizon = raw.get_or("crop", "loss_horizon", 100usize)?.1;
        let crop = CropGrid { deltas, rhos, variants, episodes, horizon, loss_horizon };

        if !raw.has_section("adversary") {
            return Err(ConfigError::Missing { section: "adversary".into(), key: "threshold".into() });
        }
        let attacker = raw.get_or("adversary", "type", Attacker::Bc)?.1;
        let deployment = raw.get_or("adversary", "deployment", Deployment::Sampled)?.1;
        let (adl, a_deltas) = raw.list_or("adversary", "delta", &crop.deltas)?;
        check_unit_list(adl, "delta", &a_deltas)?;
        let a_rhos = raw.list_or("adversary", "rho", &crop.rhos)?.1;
        let a_variants = raw.list_or("adversary", "variant", &crop.variants)?.1;
        let (bl, batch) = raw.get_or("adversary", "batch", 1usize)?;
        check(batch > 0, bl, "batch must be positive")?;
        let (tl, threshold) = raw.get_or("adversary", "threshold", 0.95)?;
        check(threshold > 0.0 && threshold <= 1.0, tl, "threshold must lie in (0, 1]")?;
        let (nl, trials) = raw.get_or("adversary", "trials", 50usize)?;
        check(trials > 0, nl, "trials must be positive")?;
        let (ml, max_samples) = raw.get_or("adversary", "max_samples", 100usize)?;
        check(max_samples > 0, ml, "max_samples must be positive")?;
        let a_horizon = raw.get_or("adversary", "horizon", 100usize)?.1;
        let (sl, smoothing) = raw.get_or("adversary", "smoothing", 0.0)?;
        check(smoothing >= 0.0, sl, "smoothing must be >= 0")?;
        let adversary = AdversarySettings {
            attacker,
            deployment,
            deltas: a_deltas,
            rhos: a_rhos,
            variants: a_variants,
            batch,
            threshold,
            trials,
            max_samples,
            horizon: a_horizon,
            smoothing,
        };

        let (hl, horizons) = raw.list::<usize>("budget", "horizon")?;
        check(
            horizons.iter().all(|&t| (1..=MAX_HORIZON).contains(&t)),
            hl,
            format!("budget horizons must lie in 1..={MAX_HORIZON}"),
        )?;
        let (bdl, b_deltas) = raw.list::<f64>("budget", "delta")?;
        check(b_deltas.iter().all(|d| *d > 0.0 && *d < 1.0), bdl, "budget delta values must lie in (0, 1)")?;
        let (mtl, mc_trials) = raw.get_or("budget", "mc_trials", 100_000u64)?;
        check(mc_trials > 0, mtl, "mc_trials must be positive")?;
        let (bbl, budgets) = raw.list_or::<f64>("budget", "budget", &[20.0])?;
        check(budgets.iter().all(|b| *b >= 0.0 && b.is_finite()), bbl, "budgets must be >= 0")?;
        let (ftl, fragment_trials) = raw.get_or("budget", "fragment_trials", 10_000usize)?;
        check(fragment_trials > 0, ftl, "fragment_trials must be positive")?;
        let (fhl, fragment_horizon) = raw.get_or("budget", "fragment_horizon", 20usize)?;
        check(fragment_horizon > 0, fhl, "fragment_horizon must be positive")?;
        let (fdl, fragment_delta) = raw.get_or("budget", "fragment_delta", 0.5)?;
        check((0.0..=1.0).contains(&fragment_delta), fdl, "fragment_delta must lie in [0, 1]")?;
        let (frl, fragment_rho) = raw.get_or("budget", "fragment_rho", 0.1)?;
        check(fragment_rho >= 0.0, frl, "fragment_rho must be >= 0")?;
        let fragment_points = raw.get_or("budget", "fragment_points", 9usize)?.1;
        let budget = BudgetSettings {
            horizons,
            deltas: b_deltas,
            mc_trials,
            budgets,
            fragment_trials,
            fragment_horizon,
            fragment_delta,
            fragment_rho,
            fragment_points,
        };

        let seed = raw.get::<u64>("seeds", "base")?.1;
        let output_dir = PathBuf::from(raw.take("output", "dir").map(|x| x.1).unwrap_or_else(|| "out".into()));
        raw.reject_unused()?;
        Ok(Self { mdp, solver, crop, adversary, budget, seed, output_dir })
    }
}

fn parse_lr(text: &str) -> Option<LrSchedule> {
    let (kind, value) = text.split_once(':')?;
    let value: f64 = value.trim().parse().ok()?;
    match kind.trim() {
        "constant" if value > 0.0 && value <= 1.0 => Some(LrSchedule::Constant(value)),
        "polynomial" if value > 0.5 && value <= 1.0 => Some(LrSchedule::Polynomial { power: value }),
        _ => None,
    }
}
