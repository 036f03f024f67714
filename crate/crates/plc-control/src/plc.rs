use ome_factory::points::Point;
use thiserror::Error;

use crate::logic::{scan_cycle, Command, LogicState, ScanOutput};
use crate::mission::{Mission, MissionKind, MissionStatus, Origin};
use crate::tags::TagTable;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlcError {
    #[error("unknown station {0}")]
    UnknownStation(usize),
    #[error("unknown mission {0}")]
    UnknownMission(u64),
    #[error("`{0}` is not an overridable actuator")]
    NotOverridable(String),
}

/// One logged scan: enough to replay it through [`scan_cycle`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub inputs: TagTable,
    pub before: LogicState,
    pub output: ScanOutput,
}

/// Owns the logic state and queues commands for the next scan.
#[derive(Debug, Clone)]
pub struct Plc {
    state: LogicState,
    next_ticket: u64,
    log: Option<Vec<ScanRecord>>,
}

impl Plc {
    pub fn new(station_count: usize, queue_capacity: u32) -> Self {
        Self {
            state: LogicState::new(station_count, queue_capacity),
            next_ticket: 1,
            log: None,
        }
    }

    /// Keep every scan's inputs, prior state and outputs.
    pub fn enable_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn log(&self) -> &[ScanRecord] {
        self.log.as_deref().unwrap_or_default()
    }

    pub fn state(&self) -> &LogicState {
        &self.state
    }

    fn ticket(&mut self) -> u64 {
        let t = self.next_ticket;
        self.next_ticket += 1;
        t
    }

    /// Queues a mission request. The decision for the returned ticket comes
    /// out of the next scan.
    pub fn submit_mission(&mut self, kind: MissionKind, origin: Origin) -> u64 {
        let ticket = self.ticket();
        self.state.pending.push(Command::Submit { ticket, kind, origin });
        ticket
    }

    pub fn set_interlock(&mut self, station: usize, present: bool) -> Result<(), PlcError> {
        if !self.state.has_station(station) {
            return Err(PlcError::UnknownStation(station));
        }
        self.state
            .pending
            .push(Command::SetInterlock { station, present });
        Ok(())
    }

    /// Operator mat state as of the last scan.
    pub fn interlock(&self, station: usize) -> bool {
        self.state
            .operator_present
            .get(station.wrapping_sub(1))
            .copied()
            .unwrap_or(false)
    }

    /// Queues a manual write to a station stop or elevator command.
    pub fn override_actuator(&mut self, point: &str, value: bool) -> Result<u64, PlcError> {
        match Point::parse(point) {
            Some(p @ (Point::Stop(k) | Point::ElevCmd(k))) => {
                if !self.state.has_station(k) {
                    return Err(PlcError::UnknownStation(k));
                }
                let ticket = self.ticket();
                self.state.pending.push(Command::Override {
                    ticket,
                    point: p.name(),
                    value,
                });
                Ok(ticket)
            }
            _ => Err(PlcError::NotOverridable(point.to_string())),
        }
    }

    pub fn mission(&self, id: u64) -> Option<&Mission> {
        self.state.missions.get(&id)
    }

    pub fn mission_status(&self, id: u64) -> Result<MissionStatus, PlcError> {
        self.mission(id)
            .map(|m| m.status)
            .ok_or(PlcError::UnknownMission(id))
    }

    pub fn scan(&mut self, inputs: &TagTable) -> ScanOutput {
        let (out, next) = scan_cycle(inputs, &self.state);
        if let Some(log) = &mut self.log {
            log.push(ScanRecord {
                inputs: inputs.clone(),
                before: self.state.clone(),
                output: out.clone(),
            });
        }
        self.state = next;
        out
    }
}
