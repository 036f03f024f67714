//! Scenario files (`.scn`). One directive per line; `#` starts a comment.
//!
//! ```text
//! name pass_docking
//! seed 42
//! config conveyor_speed 100        # any FactoryConfig key
//! at 220 mission pass 1 origin twin
//! at 220 mission elevator 3 up origin hmi
//! at 300 interlock 2 on
//! at 300 fault gc down delay 500    # link dg|gc, direction up|down|both
//! at 300 fault dg up drop 0.1
//! at 300 fault gc both sever 100    # ticks
//! at 400 fault gc both clear
//! run 600                           # total ticks
//! expect mission 1 Completed        # missions numbered in file order
//! expect reason 2 InterlockEngaged
//! expect replicated 1 yes
//! expect sequence ST1.STOP 1 0 1    # values the point takes, in order
//! expect material 1 >= 1
//! ```
//!
//! `at` entries must be sorted by tick.

use std::fmt;
use std::str::FromStr;

use ome_factory::FactoryConfig;
use plc_control::{Direction, MissionKind, Origin};

use crate::link::{FaultKind, FaultSpec, LinkDir, LinkId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Mission { kind: MissionKind, origin: Origin },
    Interlock { station: usize, on: bool },
    Fault(FaultSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scheduled {
    pub tick: u64,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Ge,
    Le,
}

impl Cmp {
    pub fn holds(self, a: u64, b: u64) -> bool {
        match self {
            Cmp::Eq => a == b,
            Cmp::Ge => a >= b,
            Cmp::Le => a <= b,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Cmp::Eq => "==",
            Cmp::Ge => ">=",
            Cmp::Le => "<=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expect {
    /// Mission `n` (1-based, in file order) ends in this state.
    Mission(usize, String),
    Reason(usize, String),
    Replicated(usize, bool),
    Sequence(String, Vec<String>),
    Material(usize, Cmp, u64),
    Waste(usize, Cmp, u64),
}

impl fmt::Display for Expect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expect::Mission(n, s) => write!(f, "mission {n} {s}"),
            Expect::Reason(n, r) => write!(f, "reason {n} {r}"),
            Expect::Replicated(n, b) => write!(f, "replicated {n} {}", if *b { "yes" } else { "no" }),
            Expect::Sequence(p, vs) => write!(f, "sequence {p} {}", vs.join(" ")),
            Expect::Material(k, c, v) => write!(f, "material {k} {} {v}", c.symbol()),
            Expect::Waste(k, c, v) => write!(f, "waste {k} {} {v}", c.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: Option<u64>,
    /// `(key, value)` overrides applied to the default factory config.
    pub config: Vec<(String, String)>,
    pub schedule: Vec<Scheduled>,
    pub run_ticks: u64,
    pub expects: Vec<Expect>,
    /// The file as written, for embedding in traces.
    pub source: String,
}

impl Scenario {
    pub fn factory_config(&self, seed: u64) -> Result<FactoryConfig, String> {
        let mut cfg = FactoryConfig::default();
        for (k, v) in &self.config {
            cfg.set(k, v)?;
        }
        cfg.rng_seed = seed;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn missions(&self) -> impl Iterator<Item = (&Scheduled, MissionKind, Origin)> {
        self.schedule.iter().filter_map(|s| match s.action {
            Action::Mission { kind, origin } => Some((s, kind, origin)),
            _ => None,
        })
    }

    /// The same scenario with extra `config` lines, which win over earlier
    /// ones. The source is rewritten so traces replay with them.
    pub fn with_config(&self, overrides: &[(String, String)]) -> Scenario {
        let mut s = self.clone();
        for (k, v) in overrides {
            s.config.push((k.clone(), v.clone()));
            s.source.push_str(&format!("\nconfig {k} {v}"));
        }
        s
    }

    /// The same scenario with every mission's origin replaced.
    pub fn with_origin(&self, origin: Origin) -> Scenario {
        let mut s = self.clone();
        for e in &mut s.schedule {
            if let Action::Mission { origin: o, .. } = &mut e.action {
                *o = origin;
            }
        }
        let needle = |l: &str| l.split_whitespace().nth(2) == Some("mission");
        s.source = self
            .source
            .lines()
            .map(|l| {
                if needle(l) {
                    match l.rsplit_once("origin ") {
                        Some((head, _)) => format!("{head}origin {}", origin.name().to_ascii_lowercase()),
                        None => l.to_string(),
                    }
                } else {
                    l.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
        s
    }
}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        message: message.into(),
    }
}

fn num<T: FromStr>(line: usize, what: &str, s: Option<&str>) -> Result<T, ParseError> {
    let s = s.ok_or_else(|| err(line, format!("missing {what}")))?;
    s.parse().map_err(|_| err(line, format!("bad {what} `{s}`")))
}

fn station(line: usize, s: Option<&str>) -> Result<usize, ParseError> {
    match num(line, "station", s)? {
        0 => Err(err(line, "stations are numbered from 1")),
        k => Ok(k),
    }
}

fn parse_action(line: usize, words: &[&str]) -> Result<Action, ParseError> {
    match words {
        ["mission", kind, rest @ ..] => {
            let station = station(line, rest.first().copied())?;
            let (kind, rest) = match kind.to_ascii_lowercase().as_str() {
                "pass" | "passdockingstation" => (MissionKind::PassDockingStation(station), &rest[1..]),
                "elevator" | "elevatortransfer" => {
                    let d = match rest.get(1).map(|d| d.to_ascii_lowercase()).as_deref() {
                        Some("up") => Direction::Up,
                        Some("down") => Direction::Down,
                        _ => return Err(err(line, "elevator mission needs up or down")),
                    };
                    (MissionKind::ElevatorTransfer(station, d), &rest[2..])
                }
                other => return Err(err(line, format!("unknown mission kind `{other}`"))),
            };
            let origin = match rest {
                ["origin", o] => Origin::parse(o).ok_or_else(|| err(line, format!("unknown origin `{o}`")))?,
                _ => return Err(err(line, "expected `origin hmi|platform|twin`")),
            };
            Ok(Action::Mission { kind, origin })
        }
        ["interlock", k, state] => {
            let station = station(line, Some(k))?;
            let on = match *state {
                "on" => true,
                "off" => false,
                _ => return Err(err(line, "interlock state must be on or off")),
            };
            Ok(Action::Interlock { station, on })
        }
        ["fault", link, dir, kind @ ..] => {
            let link = match *link {
                "dg" => LinkId::DeviceGateway,
                "gc" => LinkId::GatewayCore,
                _ => return Err(err(line, format!("unknown link `{link}` (dg or gc)"))),
            };
            let dirs = match *dir {
                "up" => vec![LinkDir::Up],
                "down" => vec![LinkDir::Down],
                "both" => vec![LinkDir::Up, LinkDir::Down],
                _ => return Err(err(line, format!("unknown direction `{dir}`"))),
            };
            let kind = match kind {
                ["delay", ms] => FaultKind::FixedDelay(num(line, "delay", Some(ms))?),
                ["drop", p] => {
                    let p: f64 = num(line, "probability", Some(p))?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(err(line, "probability must be in [0, 1]"));
                    }
                    FaultKind::Drop(p)
                }
                ["sever", ticks] => FaultKind::Sever(num(line, "duration", Some(ticks))?),
                ["clear"] => FaultKind::Clear,
                _ => return Err(err(line, "fault must be delay <ms>, drop <p>, sever <ticks> or clear")),
            };
            Ok(Action::Fault(FaultSpec { link, dirs, kind }))
        }
        _ => Err(err(line, format!("unknown action `{}`", words.join(" ")))),
    }
}

fn parse_cmp(line: usize, words: &[&str]) -> Result<(Cmp, u64), ParseError> {
    match words {
        [c, v] => {
            let c = match *c {
                "==" | "=" => Cmp::Eq,
                ">=" => Cmp::Ge,
                "<=" => Cmp::Le,
                _ => return Err(err(line, format!("unknown comparison `{c}`"))),
            };
            Ok((c, num(line, "value", Some(v))?))
        }
        [v] => Ok((Cmp::Eq, num(line, "value", Some(v))?)),
        _ => Err(err(line, "expected [==|>=|<=] <value>")),
    }
}

const STATES: [&str; 7] = [
    "Requested", "Validated", "Executing", "Completed", "Rejected", "TimedOut", "Failed",
];

fn parse_expect(line: usize, words: &[&str], missions: usize) -> Result<Expect, ParseError> {
    let mission_ref = |s: &str| -> Result<usize, ParseError> {
        let n: usize = num(line, "mission number", Some(s))?;
        if n == 0 || n > missions {
            return Err(err(line, format!("no mission {n} in the schedule")));
        }
        Ok(n)
    };
    match words {
        ["mission", n, state] => {
            if !STATES.contains(state) {
                return Err(err(line, format!("unknown mission state `{state}`")));
            }
            Ok(Expect::Mission(mission_ref(n)?, state.to_string()))
        }
        ["reason", n, r] => Ok(Expect::Reason(mission_ref(n)?, r.to_string())),
        ["replicated", n, yn] => {
            let b = match *yn {
                "yes" => true,
                "no" => false,
                _ => return Err(err(line, "replicated takes yes or no")),
            };
            Ok(Expect::Replicated(mission_ref(n)?, b))
        }
        ["sequence", point, values @ ..] if !values.is_empty() => Ok(Expect::Sequence(
            point.to_string(),
            values.iter().map(|v| v.to_string()).collect(),
        )),
        ["material", k, rest @ ..] => {
            let (c, v) = parse_cmp(line, rest)?;
            Ok(Expect::Material(num(line, "station", Some(k))?, c, v))
        }
        ["waste", k, rest @ ..] => {
            let (c, v) = parse_cmp(line, rest)?;
            Ok(Expect::Waste(num(line, "station", Some(k))?, c, v))
        }
        _ => Err(err(line, format!("unknown expectation `{}`", words.join(" ")))),
    }
}

impl FromStr for Scenario {
    type Err = ParseError;

    fn from_str(text: &str) -> Result<Self, ParseError> {
        let mut s = Scenario {
            name: String::from("scenario"),
            seed: None,
            config: Vec::new(),
            schedule: Vec::new(),
            run_ticks: 0,
            expects: Vec::new(),
            source: text.trim_end().to_string(),
        };
        let mut pending_expects = Vec::new();
        let mut run_seen = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let words: Vec<&str> = body.split_whitespace().collect();
            match words.as_slice() {
                ["name", n] => s.name = n.to_string(),
                ["seed", v] => s.seed = Some(num(line, "seed", Some(v))?),
                ["config", k, v] => {
                    FactoryConfig::default()
                        .set(k, v)
                        .map_err(|e| err(line, e))?;
                    s.config.push((k.to_string(), v.to_string()));
                }
                ["at", t, rest @ ..] => {
                    let tick: u64 = num(line, "tick", Some(t))?;
                    if s.schedule.last().is_some_and(|p: &Scheduled| p.tick > tick) {
                        return Err(err(line, "schedule is not sorted by tick"));
                    }
                    s.schedule.push(Scheduled {
                        tick,
                        action: parse_action(line, rest)?,
                    });
                }
                ["run", n] => {
                    s.run_ticks = num(line, "tick count", Some(n))?;
                    run_seen = true;
                }
                ["expect", rest @ ..] => pending_expects.push((line, rest.iter().map(|w| w.to_string()).collect::<Vec<_>>())),
                _ => return Err(err(line, format!("unknown directive `{}`", words[0]))),
            }
        }
        if !run_seen {
            return Err(err(text.lines().count().max(1), "missing `run <ticks>`"));
        }
        if let Some(last) = s.schedule.last() {
            if last.tick > s.run_ticks {
                return Err(err(text.lines().count().max(1), "schedule runs past `run`"));
            }
        }
        let missions = s.missions().count();
        for (line, words) in pending_expects {
            let words: Vec<&str> = words.iter().map(String::as_str).collect();
            s.expects.push(parse_expect(line, &words, missions)?);
        }
        Ok(s)
    }
}
