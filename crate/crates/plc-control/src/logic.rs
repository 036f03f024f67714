//! The scan cycle. [`scan_cycle`] is a pure function of the input image and
//! the logic state; commands from the network or the panel wait in
//! [`LogicState::pending`] and are consumed at the next scan.
//!
//! Within a scan the order is fixed: running missions progress, then
//! interlock changes, then manual overrides, then new submissions. Putting
//! interlocks before submissions means a mat stepped on in the same scan as
//! a remote request always wins.

use std::collections::{BTreeMap, BTreeSet};

use ome_factory::points;
use tag_protocol::{Quality, TagValue};

use crate::mission::{Direction, Mission, MissionKind, MissionStatus, Origin, RejectReason};
use crate::tags::TagTable;

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Submit {
        ticket: u64,
        kind: MissionKind,
        origin: Origin,
    },
    SetInterlock {
        station: usize,
        present: bool,
    },
    /// A manual actuator write. Always remote: it arrives over the network.
    Override {
        ticket: u64,
        point: String,
        value: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub ticket: u64,
    pub result: Result<u64, RejectReason>,
    pub scan: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueLogic {
    pub capacity: u32,
    /// Pallets released past the queue stop that have not yet left station 1.
    pub downstream: u32,
    pub engaged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogicState {
    pub scan: u64,
    pub station_count: usize,
    pub missions: BTreeMap<u64, Mission>,
    pub active: Vec<Option<u64>>,
    pub operator_present: Vec<bool>,
    pub next_mission_id: u64,
    pub pending: Vec<Command>,
    /// Latched manual values keyed by actuator name.
    pub manual: BTreeMap<String, bool>,
    /// Elevator command held after an elevator mission completes.
    pub elevator_latch: Vec<bool>,
    pub queue: QueueLogic,
    previous: BTreeMap<String, TagValue>,
}

impl LogicState {
    pub fn new(station_count: usize, queue_capacity: u32) -> Self {
        Self {
            scan: 0,
            station_count,
            missions: BTreeMap::new(),
            active: vec![None; station_count],
            operator_present: vec![false; station_count],
            next_mission_id: 1,
            pending: Vec::new(),
            manual: BTreeMap::new(),
            elevator_latch: vec![false; station_count],
            queue: QueueLogic {
                capacity: queue_capacity,
                downstream: 0,
                engaged: true,
            },
            previous: BTreeMap::new(),
        }
    }

    pub fn has_station(&self, k: usize) -> bool {
        k >= 1 && k <= self.station_count
    }

    pub fn active_mission(&self, k: usize) -> Option<&Mission> {
        self.active
            .get(k.wrapping_sub(1))
            .copied()
            .flatten()
            .and_then(|id| self.missions.get(&id))
    }

    /// Latest mission at a station, finished or not.
    pub fn last_mission(&self, k: usize) -> Option<&Mission> {
        self.missions.values().rev().find(|m| m.kind.station() == k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutput {
    pub scan: u64,
    /// Actuator name to `(value, quality)`.
    pub actuators: BTreeMap<String, (bool, Quality)>,
    pub decisions: Vec<Decision>,
    /// Override tickets refused, with why.
    pub refused: Vec<(u64, RejectReason)>,
    pub transitions: Vec<(u64, MissionStatus)>,
    /// Stations whose outputs this scan are driven by remote commands.
    pub remote_stations: BTreeSet<usize>,
}

fn transition(m: &mut Mission, to: MissionStatus, scan: u64, out: &mut Vec<(u64, MissionStatus)>) {
    debug_assert!(!m.status.is_terminal());
    m.status = to;
    m.history.push((to, scan));
    out.push((m.id, to));
}

fn station_points(k: usize) -> [String; 5] {
    [
        points::pallet_a(k),
        points::pallet_b(k),
        points::elev_a(k),
        points::elev_b(k),
        points::rfid(k),
    ]
}

pub fn scan_cycle(inputs: &TagTable, state: &LogicState) -> (ScanOutput, LogicState) {
    let mut s = state.clone();
    s.scan += 1;
    let scan = s.scan;
    let commands = std::mem::take(&mut s.pending);
    let now = |name: &str| inputs.bool(name).unwrap_or(false);
    let before = |name: &str| s.previous.get(name).and_then(TagValue::as_bool);
    let fell = |name: &str| before(name) == Some(true) && !now(name);

    let mut transitions = Vec::new();
    let mut finished = Vec::new();

    // 1. Running missions.
    for k in 1..=s.station_count {
        let Some(id) = s.active[k - 1] else { continue };
        let m = s.missions.get_mut(&id).expect("active mission exists");
        match m.status {
            MissionStatus::Validated => transition(m, MissionStatus::Executing, scan, &mut transitions),
            MissionStatus::Executing => {
                let done = match m.kind {
                    MissionKind::PassDockingStation(_) => fell(&points::pallet_a(k)),
                    MissionKind::ElevatorTransfer(_, Direction::Up) => now(&points::elev_b(k)),
                    MissionKind::ElevatorTransfer(_, Direction::Down) => now(&points::elev_a(k)),
                };
                if done {
                    if let MissionKind::ElevatorTransfer(_, d) = m.kind {
                        s.elevator_latch[k - 1] = d == Direction::Up;
                    }
                    transition(m, MissionStatus::Completed, scan, &mut transitions);
                    finished.push(k);
                }
            }
            _ => unreachable!("terminal missions are not active"),
        }
    }
    for k in finished {
        s.active[k - 1] = None;
    }

    let mut decisions = Vec::new();
    let mut refused = Vec::new();

    // 2. Interlocks.
    for c in &commands {
        if let Command::SetInterlock { station, present } = *c {
            if !s.has_station(station) {
                continue;
            }
            s.operator_present[station - 1] = present;
            if present {
                if let Some(id) = s.active[station - 1].take() {
                    let m = s.missions.get_mut(&id).expect("active mission exists");
                    m.fail_reason = Some(RejectReason::InterlockEngaged);
                    transition(m, MissionStatus::Failed, scan, &mut transitions);
                }
                s.manual.retain(|name, _| {
                    points::Point::parse(name).and_then(|p| p.station()) != Some(station)
                });
            }
        }
    }

    // 3. Manual overrides.
    for c in &commands {
        if let Command::Override { ticket, point, value } = c {
            let station = points::Point::parse(point).and_then(|p| p.station());
            let Some(k) = station.filter(|k| s.has_station(*k)) else {
                refused.push((*ticket, RejectReason::UnknownStation));
                continue;
            };
            if s.operator_present[k - 1] {
                refused.push((*ticket, RejectReason::InterlockEngaged));
            } else if s.active[k - 1].is_some() {
                refused.push((*ticket, RejectReason::StationBusy));
            } else {
                s.manual.insert(point.clone(), *value);
            }
        }
    }

    // 4. Submissions.
    for c in &commands {
        let Command::Submit { ticket, kind, origin } = *c else { continue };
        let k = kind.station();
        let result = if !s.has_station(k) {
            Err(RejectReason::UnknownStation)
        } else if origin.is_remote() && s.operator_present[k - 1] {
            Err(RejectReason::InterlockEngaged)
        } else if s.active[k - 1].is_some() {
            Err(RejectReason::StationBusy)
        } else {
            let ready = match kind {
                MissionKind::PassDockingStation(_) => now(&points::pallet_a(k)),
                MissionKind::ElevatorTransfer(_, Direction::Up) => {
                    now(&points::pallet_a(k)) && now(&points::elev_a(k))
                }
                MissionKind::ElevatorTransfer(_, Direction::Down) => now(&points::elev_b(k)),
            };
            if ready {
                Ok(())
            } else {
                Err(RejectReason::NoPallet)
            }
        };
        let result = result.map(|()| {
            let id = s.next_mission_id;
            s.next_mission_id += 1;
            s.missions.insert(
                id,
                Mission {
                    id,
                    kind,
                    origin,
                    status: MissionStatus::Validated,
                    fail_reason: None,
                    history: vec![(MissionStatus::Validated, scan)],
                },
            );
            transitions.push((id, MissionStatus::Validated));
            s.active[k - 1] = Some(id);
            // A mission takes the station's actuators over from manual control.
            s.manual.retain(|name, _| {
                points::Point::parse(name).and_then(|p| p.station()) != Some(k)
            });
            id
        });
        decisions.push(Decision { ticket, result, scan });
    }

    // 5. Queue stop.
    let queue_stale = inputs.is_stale(points::QUEUE_SENSOR) || inputs.is_stale(&points::pallet_a(1));
    if !queue_stale {
        if fell(&points::pallet_a(1)) {
            s.queue.downstream = s.queue.downstream.saturating_sub(1);
        }
        if fell(points::QUEUE_SENSOR) {
            s.queue.downstream += 1;
            s.queue.engaged = true;
        }
        if s.queue.engaged && now(points::QUEUE_SENSOR) && s.queue.downstream < s.queue.capacity {
            s.queue.engaged = false;
        }
    }

    // 6. Outputs.
    let mut actuators = BTreeMap::new();
    let mut remote_stations = BTreeSet::new();
    let quality = |stale: bool| if stale { Quality::Stale } else { Quality::Good };
    actuators.insert(points::QUEUE_STOP.to_string(), (s.queue.engaged, quality(queue_stale)));
    for k in 1..=s.station_count {
        let stale = station_points(k).iter().any(|n| inputs.is_stale(n));
        let stop_name = points::stop(k);
        let elev_name = points::elev_cmd(k);
        let mut stop = s.manual.get(&stop_name).copied().unwrap_or(true);
        let mut elev = s
            .manual
            .get(&elev_name)
            .copied()
            .unwrap_or(s.elevator_latch[k - 1]);
        if s.manual.contains_key(&stop_name) || s.manual.contains_key(&elev_name) {
            remote_stations.insert(k);
        }
        if let Some(m) = s.active_mission(k) {
            if m.status == MissionStatus::Executing {
                match m.kind {
                    MissionKind::PassDockingStation(_) => stop = false,
                    MissionKind::ElevatorTransfer(_, d) => elev = d == Direction::Up,
                }
                if m.origin.is_remote() {
                    remote_stations.insert(k);
                }
            }
        }
        actuators.insert(stop_name, (stop, quality(stale)));
        actuators.insert(elev_name, (elev, quality(stale)));
    }

    s.previous = inputs
        .iter()
        .map(|(n, e)| (n.to_string(), e.value.clone()))
        .collect();

    let out = ScanOutput {
        scan,
        actuators,
        decisions,
        refused,
        transitions,
        remote_stations,
    };
    (out, s)
}
