//! The twin's side of the mission handshake. The device is the master: a
//! record moves to Validated only when the device acknowledges the request,
//! and everything after that is driven by the device's status tag.

use plc_control::{Direction, MissionKind, Origin};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum MissionState {
    Requested,
    Validated,
    Executing,
    Completed,
    Rejected,
    TimedOut,
    /// The device aborted an executing mission (an operator stepped on the mat).
    Failed,
}

impl MissionState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            MissionState::Completed | MissionState::Rejected | MissionState::TimedOut | MissionState::Failed
        )
    }

    pub fn can_become(self, to: MissionState) -> bool {
        use MissionState::*;
        matches!(
            (self, to),
            (Requested, Validated | Rejected | TimedOut)
                | (Validated, Executing | TimedOut | Failed)
                | (Executing, Completed | TimedOut | Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("mission {id}: {from:?} cannot become {to:?}")]
pub struct BadTransition {
    pub id: u64,
    pub from: MissionState,
    pub to: MissionState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Stamp {
    pub state: MissionState,
    pub ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissionRecord {
    pub mission_id: u64,
    pub plc_mission_id: Option<u64>,
    pub kind: MissionKind,
    pub origin: Origin,
    pub state: MissionState,
    /// Rejection or failure reason as reported upstream.
    pub reason: Option<String>,
    /// Device tick at which the request was validated.
    pub validated_tick: Option<u64>,
    pub timestamps: Vec<Stamp>,
}

impl MissionRecord {
    pub fn new(mission_id: u64, kind: MissionKind, origin: Origin, now: u64) -> Self {
        Self {
            mission_id,
            plc_mission_id: None,
            kind,
            origin,
            state: MissionState::Requested,
            reason: None,
            validated_tick: None,
            timestamps: vec![Stamp {
                state: MissionState::Requested,
                ms: now,
            }],
        }
    }

    pub fn transition(&mut self, to: MissionState, now: u64) -> Result<(), BadTransition> {
        if !self.state.can_become(to) {
            return Err(BadTransition {
                id: self.mission_id,
                from: self.state,
                to,
            });
        }
        self.state = to;
        self.timestamps.push(Stamp { state: to, ms: now });
        Ok(())
    }

    pub fn last_change_ms(&self) -> u64 {
        self.timestamps.last().map_or(0, |s| s.ms)
    }

    pub fn entered(&self, state: MissionState) -> Option<u64> {
        self.timestamps.iter().find(|s| s.state == state).map(|s| s.ms)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let direction = match self.kind {
            MissionKind::ElevatorTransfer(_, Direction::Up) => Some("Up"),
            MissionKind::ElevatorTransfer(_, Direction::Down) => Some("Down"),
            MissionKind::PassDockingStation(_) => None,
        };
        serde_json::json!({
            "mission_id": self.mission_id,
            "plc_mission_id": self.plc_mission_id,
            "kind": self.kind.name(),
            "station": self.kind.station(),
            "direction": direction,
            "origin": self.origin.name(),
            "state": self.state,
            "reason": self.reason,
            "timestamps": self.timestamps,
        })
    }
}

/// A status tag value, `<id>:<status>:<request>`.
pub fn parse_status(text: &str) -> Option<(u64, plc_control::MissionStatus)> {
    let mut parts = text.splitn(3, ':');
    let id = parts.next()?.parse().ok()?;
    let status = plc_control::MissionStatus::parse(parts.next()?)?;
    Some((id, status))
}

#[cfg(test)]
mod tests {
    use super::*;
    use MissionState::*;

    #[test]
    fn only_declared_transitions() {
        let all = [Requested, Validated, Executing, Completed, Rejected, TimedOut, Failed];
        let allowed = [
            (Requested, Validated),
            (Requested, Rejected),
            (Requested, TimedOut),
            (Validated, Executing),
            (Validated, TimedOut),
            (Validated, Failed),
            (Executing, Completed),
            (Executing, TimedOut),
            (Executing, Failed),
        ];
        for a in all {
            for b in all {
                assert_eq!(a.can_become(b), allowed.contains(&(a, b)), "{a:?} -> {b:?}");
            }
        }
        for s in all {
            assert_eq!(s.is_terminal(), !all.iter().any(|t| s.can_become(*t)));
        }
    }

    #[test]
    fn status_text() {
        assert_eq!(
            parse_status("3:Executing:PassDockingStation;4;Twin"),
            Some((3, plc_control::MissionStatus::Executing))
        );
        assert_eq!(parse_status(""), None);
        assert_eq!(parse_status("x:Executing:"), None);
    }

    #[test]
    fn record_keeps_every_stamp() {
        let mut r = MissionRecord::new(1, MissionKind::PassDockingStation(2), Origin::Twin, 10);
        r.transition(Validated, 20).unwrap();
        assert!(r.transition(Completed, 30).is_err());
        r.transition(Executing, 30).unwrap();
        r.transition(Completed, 40).unwrap();
        assert_eq!(r.timestamps.len(), 4);
        assert_eq!(r.entered(Validated), Some(20));
        assert_eq!(r.to_json()["state"], "Completed");
    }
}
