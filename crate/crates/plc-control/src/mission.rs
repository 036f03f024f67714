use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MissionKind {
    PassDockingStation(usize),
    ElevatorTransfer(usize, Direction),
}

impl MissionKind {
    pub fn station(&self) -> usize {
        match *self {
            MissionKind::PassDockingStation(k) | MissionKind::ElevatorTransfer(k, _) => k,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MissionKind::PassDockingStation(_) => "PassDockingStation",
            MissionKind::ElevatorTransfer(..) => "ElevatorTransfer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    Hmi,
    Platform,
    Twin,
}

impl Origin {
    pub const ALL: [Origin; 3] = [Origin::Hmi, Origin::Platform, Origin::Twin];

    /// HMI panels sit at the line; everything else is remote control.
    pub fn is_remote(self) -> bool {
        self != Origin::Hmi
    }

    pub fn name(self) -> &'static str {
        match self {
            Origin::Hmi => "Hmi",
            Origin::Platform => "Platform",
            Origin::Twin => "Twin",
        }
    }

    /// Case-insensitive.
    pub fn parse(s: &str) -> Option<Origin> {
        Self::ALL
            .into_iter()
            .find(|o| o.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    StationBusy,
    NoPallet,
    InterlockEngaged,
    UnknownStation,
}

impl RejectReason {
    pub fn name(self) -> &'static str {
        match self {
            RejectReason::StationBusy => "StationBusy",
            RejectReason::NoPallet => "NoPallet",
            RejectReason::InterlockEngaged => "InterlockEngaged",
            RejectReason::UnknownStation => "UnknownStation",
        }
    }

    pub fn parse(s: &str) -> Option<RejectReason> {
        [
            RejectReason::StationBusy,
            RejectReason::NoPallet,
            RejectReason::InterlockEngaged,
            RejectReason::UnknownStation,
        ]
        .into_iter()
        .find(|r| r.name() == s)
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MissionStatus {
    Validated,
    Executing,
    Completed,
    Failed,
}

impl MissionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, MissionStatus::Completed | MissionStatus::Failed)
    }

    pub fn name(self) -> &'static str {
        match self {
            MissionStatus::Validated => "Validated",
            MissionStatus::Executing => "Executing",
            MissionStatus::Completed => "Completed",
            MissionStatus::Failed => "Failed",
        }
    }

    pub fn parse(s: &str) -> Option<MissionStatus> {
        [
            MissionStatus::Validated,
            MissionStatus::Executing,
            MissionStatus::Completed,
            MissionStatus::Failed,
        ]
        .into_iter()
        .find(|m| m.name() == s)
    }
}

impl fmt::Display for MissionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mission {
    pub id: u64,
    pub kind: MissionKind,
    pub origin: Origin,
    pub status: MissionStatus,
    pub fail_reason: Option<RejectReason>,
    /// `(status, scan)` for every transition, starting with Validated.
    pub history: Vec<(MissionStatus, u64)>,
}

/// A mission request as carried in the `SYS.MISSION_REQ` tag:
/// `PassDockingStation;<k>;<origin>` or
/// `ElevatorTransfer;<k>;<Up|Down>;<origin>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MissionRequest {
    pub kind: MissionKind,
    pub origin: Origin,
}

impl fmt::Display for MissionRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            MissionKind::PassDockingStation(k) => write!(f, "PassDockingStation;{k};{}", self.origin),
            MissionKind::ElevatorTransfer(k, d) => {
                write!(f, "ElevatorTransfer;{k};{d:?};{}", self.origin)
            }
        }
    }
}

impl FromStr for MissionRequest {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(';').collect();
        let station = |t: &str| t.parse::<usize>().map_err(|_| format!("bad station `{t}`"));
        let origin = |t: &str| Origin::parse(t).ok_or_else(|| format!("bad origin `{t}`"));
        match parts.as_slice() {
            ["PassDockingStation", k, o] => Ok(MissionRequest {
                kind: MissionKind::PassDockingStation(station(k)?),
                origin: origin(o)?,
            }),
            ["ElevatorTransfer", k, d, o] => {
                let dir = match d.to_ascii_lowercase().as_str() {
                    "up" => Direction::Up,
                    "down" => Direction::Down,
                    _ => return Err(format!("bad direction `{d}`")),
                };
                Ok(MissionRequest {
                    kind: MissionKind::ElevatorTransfer(station(k)?, dir),
                    origin: origin(o)?,
                })
            }
            _ => Err(format!("unrecognised mission request `{s}`")),
        }
    }
}
