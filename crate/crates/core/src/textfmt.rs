//! Plain-text tabular serialization for MDPs and value tables.
//!
//! Every file starts with a `# crop-<kind> v1` header. Blank lines and lines
//! starting with `#` after the header are ignored. Floats are written with
//! Rust's shortest round-trip formatting, so `read(write(x)) == x` bit for bit.
//!
//! MDP:
//!
//! ```text
//! # crop-mdp v1
//! n_states 3
//! n_actions 2
//! gamma 0.9
//! terminal 2
//! start 0:1
//! state 0
//! 0 0 1:1
//! 1 0 0:1
//! state 1
//! ...
//! ```
//!
//! Each line under `state s` is `action reward next:prob next:prob ...` and
//! every `(state, action)` pair must appear exactly once. `terminal` lists
//! terminal state indices (possibly none); `start` lists `state:prob` pairs.
//!
//! Q-table: header `# crop-qtable v1`, `n_states`, `n_actions`, then one line
//! `s q(s,0) q(s,1) ...` per state. V-table: header `# crop-vtable v1`,
//! `n_states`, then one line `s v(s)` per state.

use std::fmt::Write as _;

use thiserror::Error;

use crate::mdp::{FiniteMdp, MdpError};
use crate::solver::{QTable, VTable};

pub const MDP_HEADER: &str = "# crop-mdp v1";
pub const QTABLE_HEADER: &str = "# crop-qtable v1";
pub const VTABLE_HEADER: &str = "# crop-vtable v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing {0}")]
    Missing(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

fn syntax(line: usize, message: impl Into<String>) -> TextError {
    TextError::Syntax { line, message: message.into() }
}

pub fn write_mdp(mdp: &FiniteMdp) -> String {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut out = String::new();
    let _ = writeln!(out, "{MDP_HEADER}");
    let _ = writeln!(out, "n_states {ns}");
    let _ = writeln!(out, "n_actions {na}");
    let _ = writeln!(out, "gamma {}", mdp.gamma());
    out.push_str("terminal");
    for s in mdp.terminal_states() {
        let _ = write!(out, " {s}");
    }
    out.push('\n');
    out.push_str("start");
    for (s, &p) in mdp.start_distribution().iter().enumerate() {
        if p > 0.0 {
            let _ = write!(out, " {s}:{p}");
        }
    }
    out.push('\n');
    for s in 0..ns {
        let _ = writeln!(out, "state {s}");
        for a in 0..na {
            let _ = write!(out, "{a} {}", mdp.reward(s, a));
            for (next, &p) in mdp.transition_row(s, a).iter().enumerate() {
                if p > 0.0 {
                    let _ = write!(out, " {next}:{p}");
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Non-blank, non-comment lines with 1-based line numbers, after checking
/// the header.
fn content_lines<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, &'a str)>, TextError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, h)) if h == header => {}
        Some((n, h)) => return Err(syntax(n, format!("expected header {header:?}, found {h:?}"))),
        None => return Err(TextError::Missing(format!("header {header:?}"))),
    }
    Ok(lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('#')).collect())
}

fn parse_num<T: std::str::FromStr>(line: usize, field: &str, what: &str) -> Result<T, TextError> {
    field.parse().map_err(|_| syntax(line, format!("cannot parse {what} from {field:?}")))
}

fn keyed<'a>(line: usize, text: &'a str, key: &str) -> Result<&'a str, TextError> {
    let mut parts = text.splitn(2, char::is_whitespace);
    if parts.next() != Some(key) {
        return Err(syntax(line, format!("expected `{key}`")));
    }
    Ok(parts.next().unwrap_or("").trim())
}

fn parse_pair(line: usize, field: &str, n_states: usize) -> Result<(usize, f64), TextError> {
    let (s, p) = field
        .split_once(':')
        .ok_or_else(|| syntax(line, format!("expected state:prob, found {field:?}")))?;
    let s: usize = parse_num(line, s, "state index")?;
    if s >= n_states {
        return Err(syntax(line, format!("state {s} out of range")));
    }
    Ok((s, parse_num(line, p, "probability")?))
}

pub fn read_mdp(text: &str) -> Result<FiniteMdp, TextError> {
    let lines = content_lines(text, MDP_HEADER)?;
    let mut it = lines.into_iter();
    let mut next = |what: &str| it.next().ok_or_else(|| TextError::Missing(what.to_string()));

    let (l, t) = next("n_states")?;
    let ns: usize = parse_num(l, keyed(l, t, "n_states")?, "n_states")?;
    let (l, t) = next("n_actions")?;
    let na: usize = parse_num(l, keyed(l, t, "n_actions")?, "n_actions")?;
    if ns == 0 || na == 0 {
        return Err(syntax(l, "state and action counts must be positive"));
    }
    let (l, t) = next("gamma")?;
    let gamma: f64 = parse_num(l, keyed(l, t, "gamma")?, "gamma")?;
    let (l, t) = next("terminal")?;
    let mut terminal = vec![false; ns];
    for f in keyed(l, t, "terminal")?.split_whitespace() {
        let s: usize = parse_num(l, f, "terminal state")?;
        if s >= ns {
            return Err(syntax(l, format!("terminal state {s} out of range")));
        }
        terminal[s] = true;
    }
    let (l, t) = next("start")?;
    let mut start = vec![0.0; ns];
    for f in keyed(l, t, "start")?.split_whitespace() {
        let (s, p) = parse_pair(l, f, ns)?;
        start[s] += p;
    }

    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    let mut seen = vec![false; ns * na];
    let mut current: Option<usize> = None;
    while let Ok((l, t)) = next("") {
        if let Some(rest) = t.strip_prefix("state") {
            if rest.starts_with(char::is_whitespace) {
                let s: usize = parse_num(l, rest.trim(), "state index")?;
                if s >= ns {
                    return Err(syntax(l, format!("state {s} out of range")));
                }
                current = Some(s);
                continue;
            }
        }
        let s = current.ok_or_else(|| syntax(l, "action line before any `state` block"))?;
        let mut fields = t.split_whitespace();
        let a: usize = parse_num(l, fields.next().unwrap_or(""), "action")?;
        if a >= na {
            return Err(syntax(l, format!("action {a} out of range")));
        }
        if std::mem::replace(&mut seen[s * na + a], true) {
            return Err(syntax(l, format!("duplicate line for ({s}, {a})")));
        }
        reward[s * na + a] = parse_num(l, fields.next().unwrap_or(""), "reward")?;
        for f in fields {
            let (n, p) = parse_pair(l, f, ns)?;
            transition[(s * na + a) * ns + n] += p;
        }
    }
    if let Some(i) = seen.iter().position(|&x| !x) {
        return Err(TextError::Missing(format!("line for ({}, {})", i / na, i % na)));
    }
    Ok(FiniteMdp::new(ns, na, transition, reward, gamma, terminal, start)?)
}

pub fn write_qtable(q: &QTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{QTABLE_HEADER}");
    let _ = writeln!(out, "n_states {}", q.n_states());
    let _ = writeln!(out, "n_actions {}", q.n_actions());
    for s in 0..q.n_states() {
        let _ = write!(out, "{s}");
        for v in q.row(s) {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

/// Parse `n` indexed rows of `width` values each.
fn read_rows(lines: &[(usize, &str)], n: usize, width: usize) -> Result<Vec<f64>, TextError> {
    if lines.len() != n {
        return Err(TextError::Missing(format!("{n} table rows, found {}", lines.len())));
    }
    let mut values = Vec::with_capacity(n * width);
    for (expected, &(l, t)) in lines.iter().enumerate() {
        let mut fields = t.split_whitespace();
        let s: usize = parse_num(l, fields.next().unwrap_or(""), "state index")?;
        if s != expected {
            return Err(syntax(l, format!("expected row for state {expected}, found {s}")));
        }
        let row: Vec<f64> = fields.map(|f| parse_num(l, f, "value")).collect::<Result<_, _>>()?;
        if row.len() != width {
            return Err(syntax(l, format!("expected {width} values, found {}", row.len())));
        }
        values.extend(row);
    }
    Ok(values)
}

pub fn read_qtable(text: &str) -> Result<QTable, TextError> {
    let lines = content_lines(text, QTABLE_HEADER)?;
    let (l, t) = *lines.first().ok_or_else(|| TextError::Missing("n_states".into()))?;
    let ns: usize = parse_num(l, keyed(l, t, "n_states")?, "n_states")?;
    let (l, t) = *lines.get(1).ok_or_else(|| TextError::Missing("n_actions".into()))?;
    let na: usize = parse_num(l, keyed(l, t, "n_actions")?, "n_actions")?;
    let values = read_rows(&lines[2..], ns, na)?;
    Ok(QTable::new(ns, na, values).expect("row count and width checked"))
}

pub fn write_vtable(v: &VTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{VTABLE_HEADER}");
    let _ = writeln!(out, "n_states {}", v.len());
    for (s, x) in v.values.iter().enumerate() {
        let _ = writeln!(out, "{s} {x}");
    }
    out
}

pub fn read_vtable(text: &str) -> Result<VTable, TextError> {
    let lines = content_lines(text, VTABLE_HEADER)?;
    let (l, t) = *lines.first().ok_or_else(|| TextError::Missing("n_states".into()))?;
    let ns: usize = parse_num(l, keyed(l, t, "n_states")?, "n_states")?;
    Ok(VTable { values: read_rows(&lines[1..], ns, 1)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_chain, Gridworld};
    use crate::solver::value_iteration;
    use proptest::prelude::*;

    #[test]
    fn benchmark_round_trips() {
        for mdp in [Gridworld::canonical().build().unwrap(), build_chain(5, 0.95).unwrap()] {
            let text = write_mdp(&mdp);
            assert_eq!(read_mdp(&text).unwrap(), mdp);
            let sol = value_iteration(&mdp, 1e-10, 10_000).unwrap();
            assert_eq!(read_qtable(&write_qtable(&sol.q)).unwrap(), sol.q);
            assert_eq!(read_vtable(&write_vtable(&sol.v)).unwrap(), sol.v);
        }
    }

    #[test]
    fn chain_text_is_stable() {
        let text = write_mdp(&build_chain(2, 0.5).unwrap());
        let expected = "# crop-mdp v1\nn_states 2\nn_actions 2\ngamma 0.5\nterminal 1\nstart 0:1\n\
                        state 0\n0 1 1:1\n1 0 0:1\nstate 1\n0 0 1:1\n1 0 1:1\n";
        assert_eq!(text, expected);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let good = write_mdp(&build_chain(2, 0.5).unwrap());
        let bad = good.replace("0 1 1:1", "0 1 1:x");
        assert!(matches!(read_mdp(&bad), Err(TextError::Syntax { line: 8, .. })));
        let bad = good.replace("0 1 1:1", "0 1 1:0.5");
        assert!(matches!(read_mdp(&bad), Err(TextError::Mdp(MdpError::RowSum { .. }))));
        let bad = good.replace("state 1\n0 0 1:1\n", "state 1\n");
        assert!(matches!(read_mdp(&bad), Err(TextError::Missing(_))));
        let bad = good.replace("1 0 0:1", "0 1 1:1");
        assert!(matches!(read_mdp(&bad), Err(TextError::Syntax { line: 9, .. })));
        assert!(matches!(read_mdp("nonsense"), Err(TextError::Syntax { line: 1, .. })));
        assert!(matches!(read_qtable("# crop-qtable v1\nn_states 1\nn_actions 2\n0 1.0\n"), Err(TextError::Syntax { line: 4, .. })));
        assert!(matches!(read_vtable("# crop-vtable v1\nn_states 2\n0 1\n"), Err(TextError::Missing(_))));
    }

    fn arb_mdp() -> impl Strategy<Value = FiniteMdp> {
        (1usize..5, 1usize..4).prop_flat_map(|(ns, na)| {
            (
                proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, ns), ns * na),
                proptest::collection::vec(0.0f64..=1.0, ns * na),
                0.0f64..0.999,
                proptest::collection::vec(0.01f64..1.0, ns),
            )
                .prop_map(move |(rows, reward, gamma, start)| {
                    let mut transition = Vec::with_capacity(ns * na * ns);
                    for (i, row) in rows.iter().enumerate() {
                        let total: f64 = row.iter().sum();
                        if total == 0.0 {
                            let mut r = vec![0.0; ns];
                            r[i / na] = 1.0;
                            transition.extend(r);
                        } else {
                            transition.extend(row.iter().map(|p| p / total));
                        }
                    }
                    let total: f64 = start.iter().sum();
                    let start = start.iter().map(|p| p / total).collect();
                    FiniteMdp::new(ns, na, transition, reward, gamma, vec![false; ns], start).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn mdp_round_trip(mdp in arb_mdp()) {
            prop_assert_eq!(read_mdp(&write_mdp(&mdp)).unwrap(), mdp);
        }

        #[test]
        fn qtable_round_trip(ns in 1usize..6, na in 1usize..5, seed in proptest::collection::vec(-1e6f64..1e6, 30)) {
            let values = (0..ns * na).map(|i| seed[i % seed.len()] / (i as f64 + 1.0)).collect();
            let q = QTable::new(ns, na, values).unwrap();
            prop_assert_eq!(read_qtable(&write_qtable(&q)).unwrap(), q.clone());
            let v = q.state_values();
            prop_assert_eq!(read_vtable(&write_vtable(&v)).unwrap(), v);
        }
    }
}
