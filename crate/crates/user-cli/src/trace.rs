//! Run traces. A trace is text, one record per line:
//!
//! ```text
//! # dtf-trace 1
//! # seed 42
//! # scn <scenario line>          (the scenario, verbatim, one per line)
//! <tick> ome <point> <value>     sensor change in the factory
//! <tick> act <point> <0|1> remote=<0|1>
//! <tick> plc mission <id> <status>
//! <tick> mat <station> <0|1>
//! <tick> twin event <thing> <event> [k=v ...]
//! <tick> twin mission <id> <state> seq=<n> ms=<ms> [reason=<r>]
//! <tick> twin replicate mission=<id> station=<k> seq=<n> ms=<ms> effective_ms=<ms>
//! <tick> twin stale <reason>
//! <tick> link reconnect
//! end <tick>
//! ```
//!
//! Ticks are device ticks; twin records use the twin's clock divided by the
//! tick duration. A trace without its `end` record is incomplete.

use crate::scenario::Scenario;

pub const MAGIC: &str = "# dtf-trace 1";

pub fn header(seed: u64, scenario: &Scenario) -> Vec<String> {
    let mut h = vec![MAGIC.to_string(), format!("# seed {seed}")];
    h.extend(scenario.source.lines().map(|l| format!("# scn {l}")));
    h
}

/// Seed and scenario recorded in a trace's header.
pub fn parse_header(lines: &[String]) -> Result<(u64, Scenario), String> {
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err("not a dtf trace".into());
    }
    let seed = lines
        .get(1)
        .and_then(|l| l.strip_prefix("# seed "))
        .and_then(|s| s.parse().ok())
        .ok_or("missing seed")?;
    let source: Vec<&str> = lines
        .iter()
        .skip(2)
        .map_while(|l| l.strip_prefix("# scn ").or_else(|| (l == "# scn").then_some("")))
        .collect();
    let scenario = source.join("\n").parse::<Scenario>().map_err(|e| format!("embedded scenario: {e}"))?;
    Ok((seed, scenario))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Identical,
    Diverged {
        /// 1-based line number.
        line: usize,
        tick: Option<u64>,
        recorded: Option<String>,
        replayed: Option<String>,
    },
    Incomplete {
        lines: usize,
    },
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Identical => f.write_str("identical"),
            Verdict::Incomplete { lines } => write!(f, "incomplete: trace ends after {lines} lines without `end`"),
            Verdict::Diverged {
                line,
                tick,
                recorded,
                replayed,
            } => {
                write!(f, "diverged at line {line}")?;
                if let Some(t) = tick {
                    write!(f, " (tick {t})")?;
                }
                write!(
                    f,
                    ": recorded `{}`, replayed `{}`",
                    recorded.as_deref().unwrap_or("<none>"),
                    replayed.as_deref().unwrap_or("<none>")
                )
            }
        }
    }
}

fn tick_of(line: &str) -> Option<u64> {
    let mut w = line.split_whitespace();
    match w.next()? {
        "end" => w.next()?.parse().ok(),
        t => t.parse().ok(),
    }
}

pub fn compare(recorded: &[String], replayed: &[String]) -> Verdict {
    if !recorded.last().is_some_and(|l| l.starts_with("end ")) {
        return Verdict::Incomplete { lines: recorded.len() };
    }
    let n = recorded.len().max(replayed.len());
    for i in 0..n {
        let (a, b) = (recorded.get(i), replayed.get(i));
        if a != b {
            return Verdict::Diverged {
                line: i + 1,
                tick: a.and_then(|l| tick_of(l)).or_else(|| b.and_then(|l| tick_of(l))),
                recorded: a.cloned(),
                replayed: b.cloned(),
            };
        }
    }
    Verdict::Identical
}
