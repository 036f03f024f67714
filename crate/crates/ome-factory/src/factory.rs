use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::FactoryConfig;
use crate::error::FactoryError;
use crate::geometry::Layout;
use crate::ledger::FlowLedger;
use crate::points::{self, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PalletState {
    Moving,
    BlockedAtDock,
    InElevator,
    AtStation,
    QueueHeld,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pallet {
    rfid: String,
    front: u64,
    state: PalletState,
    /// Station whose elevator carries this pallet; `None` at the AMR buffer.
    dock: Option<usize>,
    dwell_remaining: u32,
}

impl Pallet {
    pub fn rfid(&self) -> &str {
        &self.rfid
    }

    pub fn state(&self) -> PalletState {
        self.state
    }

    /// Loop position of the pallet's leading edge.
    pub fn front(&self) -> u64 {
        self.front
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElevatorPosition {
    Down,
    Moving,
    Up,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DockingStation {
    pub station_id: usize,
    /// `[A, B]`: A at the stop position, B one pallet pitch upstream.
    pub pallet_sensors: [bool; 2],
    /// `[A, B]`: A while the elevator is down, B while it is up.
    pub elevator_sensors: [bool; 2],
    pub stop_engaged: bool,
    pub elevator_cmd: bool,
    pub elevator_position: ElevatorPosition,
    travel: Option<(ElevatorPosition, u8)>,
    pub rfid: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueStop {
    pub sensor: bool,
    pub engaged: bool,
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PointValue {
    Bool(bool),
    Text(String),
}

impl fmt::Display for PointValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointValue::Bool(b) => write!(f, "{}", u8::from(*b)),
            PointValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorEvent {
    pub tick: u64,
    pub point_name: String,
    pub new_value: PointValue,
}

/// Trace record form: `tick,point_name,value`.
impl fmt::Display for SensorEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.tick, self.point_name, self.new_value)
    }
}

const ELEVATOR_TRAVEL_TICKS: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct FactoryState {
    config: FactoryConfig,
    layout: Layout,
    tick: u64,
    pallets: Vec<Pallet>,
    stations: Vec<DockingStation>,
    queue: QueueStop,
    ledger: FlowLedger,
    rng: ChaCha8Rng,
}

pub fn build_factory(config: FactoryConfig) -> Result<FactoryState, FactoryError> {
    FactoryState::new(config)
}

enum Hold {
    Dock,
    Queue,
}

impl FactoryState {
    pub fn new(config: FactoryConfig) -> Result<Self, FactoryError> {
        config.validate()?;
        let layout = Layout::new(&config.segment_lengths);
        let stations = (1..=config.station_count)
            .map(|k| DockingStation {
                station_id: k,
                pallet_sensors: [false; 2],
                elevator_sensors: [true, false],
                stop_engaged: true,
                elevator_cmd: false,
                elevator_position: ElevatorPosition::Down,
                travel: None,
                rfid: String::new(),
            })
            .collect();
        let mut ledger = FlowLedger::default();
        ledger.energy_uj.insert(points::CONVEYOR.to_string(), 0);
        ledger.energy_uj.insert(points::QUEUE_STOP_DEVICE.to_string(), 0);
        for k in 1..=config.station_count {
            ledger.energy_uj.insert(points::stop_device(k), 0);
            ledger.energy_uj.insert(points::elevator_device(k), 0);
            ledger.material_units.insert(k, 0);
            ledger.waste_units.insert(k, 0);
        }
        let total = layout.total();
        let count = config.pallet_count as u64;
        let pallets = (0..config.pallet_count)
            .map(|i| Pallet {
                rfid: points::pallet_rfid(i),
                front: (i as u64 * total / count.max(1) + u64::from(config.pallet_length)) % total,
                state: PalletState::Moving,
                dock: None,
                dwell_remaining: 0,
            })
            .collect();
        let mut state = Self {
            queue: QueueStop {
                sensor: false,
                engaged: true,
                capacity: config.queue_capacity,
            },
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            config,
            layout,
            tick: 0,
            pallets,
            stations,
            ledger,
        };
        for i in 0..state.pallets.len() {
            state.settle(i);
        }
        state.refresh_sensors();
        Ok(state)
    }

    pub fn config(&self) -> &FactoryConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn pallets(&self) -> &[Pallet] {
        &self.pallets
    }

    pub fn stations(&self) -> &[DockingStation] {
        &self.stations
    }

    pub fn station(&self, k: usize) -> Option<&DockingStation> {
        k.checked_sub(1).and_then(|i| self.stations.get(i))
    }

    pub fn queue(&self) -> &QueueStop {
        &self.queue
    }

    /// `(segment index, offset from segment start)` of a pallet's front.
    pub fn pallet_location(&self, index: usize) -> (usize, u64) {
        self.layout.locate(self.pallets[index].front)
    }

    /// Moves a pallet to `front` and settles its state as if it had just
    /// arrived there. Sensors update silently. Intended for scripted setups.
    pub fn place_pallet(&mut self, index: usize, front: u64) {
        let p = &mut self.pallets[index];
        p.front = front % self.layout.total();
        p.state = PalletState::Moving;
        p.dock = None;
        p.dwell_remaining = 0;
        self.settle(index);
        self.refresh_sensors();
    }

    fn hold_at(&self, pos: u64) -> Option<Hold> {
        if pos == self.layout.queue_position() {
            return (self.config.dwell_ticks() > 0 || self.queue.engaged).then_some(Hold::Queue);
        }
        (1..=self.config.station_count)
            .find(|&k| self.layout.stop_position(k) == pos && self.stations[k - 1].stop_engaged)
            .map(|_| Hold::Dock)
    }

    fn settle(&mut self, index: usize) {
        let hold = self.hold_at(self.pallets[index].front);
        let dwell = self.config.dwell_ticks();
        let p = &mut self.pallets[index];
        match hold {
            Some(Hold::Dock) => p.state = PalletState::BlockedAtDock,
            Some(Hold::Queue) if dwell > 0 => {
                p.state = PalletState::AtStation;
                p.dock = None;
                p.dwell_remaining = dwell;
            }
            Some(Hold::Queue) => p.state = PalletState::QueueHeld,
            None => {}
        }
    }

    /// Distance to the first point in `(front, front + step]` that stops a
    /// moving pallet, or `step` if there is none.
    fn reach(&self, front: u64, step: u64) -> (u64, Option<Hold>) {
        let mut best: Option<(u64, Hold)> = None;
        let queue_holds = self.config.dwell_ticks() > 0 || self.queue.engaged;
        if queue_holds {
            let d = self.layout.ahead(front, self.layout.queue_position());
            if d > 0 && d <= step {
                best = Some((d, Hold::Queue));
            }
        }
        for st in &self.stations {
            if !st.stop_engaged {
                continue;
            }
            let d = self.layout.ahead(front, self.layout.stop_position(st.station_id));
            if d > 0 && d <= step && best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, Hold::Dock));
            }
        }
        match best {
            Some((d, h)) => (d, Some(h)),
            None => (step, None),
        }
    }

    pub fn actuate(&mut self, point_name: &str, value: bool) -> Result<(), FactoryError> {
        let point = Point::parse(point_name)
            .filter(|p| p.station().is_none_or(|k| k >= 1 && k <= self.config.station_count))
            .ok_or_else(|| FactoryError::UnknownPoint(point_name.to_string()))?;
        match point {
            Point::Stop(k) => self.stations[k - 1].stop_engaged = value,
            Point::ElevCmd(k) => self.stations[k - 1].elevator_cmd = value,
            Point::QueueStop => self.queue.engaged = value,
            _ => return Err(FactoryError::NotAnActuator(point_name.to_string())),
        }
        Ok(())
    }

    /// Current value of any sensor or actuator point.
    pub fn point_value(&self, point_name: &str) -> Result<PointValue, FactoryError> {
        let unknown = || FactoryError::UnknownPoint(point_name.to_string());
        let point = Point::parse(point_name).ok_or_else(unknown)?;
        let station = match point.station() {
            Some(k) => Some(self.station(k).ok_or_else(unknown)?),
            None => None,
        };
        Ok(match (point, station) {
            (Point::PalletA(_), Some(s)) => PointValue::Bool(s.pallet_sensors[0]),
            (Point::PalletB(_), Some(s)) => PointValue::Bool(s.pallet_sensors[1]),
            (Point::ElevA(_), Some(s)) => PointValue::Bool(s.elevator_sensors[0]),
            (Point::ElevB(_), Some(s)) => PointValue::Bool(s.elevator_sensors[1]),
            (Point::Rfid(_), Some(s)) => PointValue::Text(s.rfid.clone()),
            (Point::Stop(_), Some(s)) => PointValue::Bool(s.stop_engaged),
            (Point::ElevCmd(_), Some(s)) => PointValue::Bool(s.elevator_cmd),
            (Point::QueueSensor, _) => PointValue::Bool(self.queue.sensor),
            (Point::QueueStop, _) => PointValue::Bool(self.queue.engaged),
            _ => return Err(unknown()),
        })
    }

    /// Every point name on the line, sorted.
    pub fn point_names(&self) -> Vec<String> {
        let mut names = vec![points::QUEUE_SENSOR.to_string(), points::QUEUE_STOP.to_string()];
        for k in 1..=self.config.station_count {
            names.extend([
                points::pallet_a(k),
                points::pallet_b(k),
                points::elev_a(k),
                points::elev_b(k),
                points::rfid(k),
                points::stop(k),
                points::elev_cmd(k),
            ]);
        }
        names.sort();
        names
    }

    pub fn rfid_read(&self, reader_id: &str) -> Result<Option<String>, FactoryError> {
        let k = reader_id
            .strip_prefix("R-")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&k| k >= 1 && k <= self.config.station_count)
            .ok_or_else(|| FactoryError::UnknownReader(reader_id.to_string()))?;
        let rfid = &self.stations[k - 1].rfid;
        Ok((!rfid.is_empty()).then(|| rfid.clone()))
    }

    pub fn snapshot_ledger(&self) -> FlowLedger {
        self.ledger.clone()
    }

    /// Advances the line by one tick and returns the sensor points that
    /// changed, sorted by name.
    pub fn tick(&mut self) -> Vec<SensorEvent> {
        self.tick += 1;
        let before = self.sensor_values();
        let elevator_active = self.step_elevators();

        for p in &mut self.pallets {
            match p.state {
                PalletState::BlockedAtDock => {
                    let k = (1..=self.config.station_count)
                        .find(|&k| self.layout.stop_position(k) == p.front);
                    if k.is_none_or(|k| !self.stations[k - 1].stop_engaged) {
                        p.state = PalletState::Moving;
                    }
                }
                PalletState::QueueHeld if !self.queue.engaged => p.state = PalletState::Moving,
                _ => {}
            }
        }
        for p in &mut self.pallets {
            if p.state == PalletState::AtStation && p.dock.is_none() {
                p.dwell_remaining = p.dwell_remaining.saturating_sub(1);
                if p.dwell_remaining == 0 {
                    p.state = PalletState::QueueHeld;
                }
            }
        }

        let advances = self.plan_motion();
        let pitch_len = u64::from(self.config.pallet_length);
        let mut any_moved = false;
        for (i, &(adv, reach)) in advances.iter().enumerate() {
            if adv == 0 {
                continue;
            }
            any_moved = true;
            let old_front = self.pallets[i].front;
            let old_rear = self.layout.back(old_front, pitch_len);
            self.pallets[i].front = self.layout.advance(old_front, adv);
            if adv == reach.0 && reach.1 {
                self.settle(i);
            }
            for k in 1..=self.config.station_count {
                let d = self.layout.ahead(old_rear, self.layout.stop_position(k));
                if d > 0 && d <= adv {
                    self.record_pass(k);
                }
            }
        }

        self.accumulate_energy(any_moved, &elevator_active);
        self.refresh_sensors();
        let after = self.sensor_values();
        after
            .into_iter()
            .filter(|(name, v)| before.get(name) != Some(v))
            .map(|(point_name, new_value)| SensorEvent {
                tick: self.tick,
                point_name,
                new_value,
            })
            .collect()
    }

    fn step_elevators(&mut self) -> Vec<bool> {
        let mut active = vec![false; self.stations.len()];
        for (idx, st) in self.stations.iter_mut().enumerate() {
            let k = idx + 1;
            let stop_pos = self.layout.stop_position(k);
            let mut arrived = None;
            match st.travel {
                Some((target, remaining)) => {
                    active[idx] = true;
                    if remaining <= 1 {
                        st.travel = None;
                        st.elevator_position = target;
                        arrived = Some(target);
                    } else {
                        st.travel = Some((target, remaining - 1));
                    }
                }
                None => {
                    let target = match (st.elevator_cmd, st.elevator_position) {
                        (true, ElevatorPosition::Down) => Some(ElevatorPosition::Up),
                        (false, ElevatorPosition::Up) => Some(ElevatorPosition::Down),
                        _ => None,
                    };
                    if let Some(target) = target {
                        active[idx] = true;
                        st.travel = Some((target, ELEVATOR_TRAVEL_TICKS));
                        st.elevator_position = ElevatorPosition::Moving;
                        for p in &mut self.pallets {
                            let carried = match target {
                                ElevatorPosition::Up => {
                                    p.state == PalletState::BlockedAtDock && p.front == stop_pos
                                }
                                _ => p.state == PalletState::AtStation && p.dock == Some(k),
                            };
                            if carried {
                                p.state = PalletState::InElevator;
                                p.dock = Some(k);
                            }
                        }
                    }
                }
            }
            if let Some(target) = arrived {
                for p in &mut self.pallets {
                    if p.state == PalletState::InElevator && p.dock == Some(k) {
                        if target == ElevatorPosition::Up {
                            p.state = PalletState::AtStation;
                        } else {
                            p.state = PalletState::BlockedAtDock;
                            p.dock = None;
                        }
                    }
                }
            }
        }
        active
    }

    /// Per pallet: `(advance, (distance to hold point, is hold point))`.
    /// Followers are limited so they keep `pallet_gap` behind the pallet ahead.
    fn plan_motion(&self) -> Vec<(u64, (u64, bool))> {
        let step = u64::from(self.config.step_mm());
        let pitch = u64::from(self.config.pallet_length) + u64::from(self.config.pallet_gap);
        let n = self.pallets.len();
        let mut plan: Vec<(u64, (u64, bool))> = self
            .pallets
            .iter()
            .map(|p| {
                if p.state == PalletState::Moving {
                    let (d, hold) = self.reach(p.front, step);
                    (d, (d, hold.is_some()))
                } else {
                    (0, (0, false))
                }
            })
            .collect();
        if n < 2 {
            return plan;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (self.pallets[i].front, i));
        let mut leader = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            leader[i] = order[(pos + 1) % n];
        }
        loop {
            let mut changed = false;
            for i in 0..n {
                let l = leader[i];
                let spacing = self.layout.ahead(self.pallets[i].front, self.pallets[l].front);
                let limit = (spacing + plan[l].0).saturating_sub(pitch);
                if plan[i].0 > limit {
                    plan[i].0 = limit;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        plan
    }

    fn record_pass(&mut self, station: usize) {
        let parts = u64::from(self.config.parts_per_pass);
        *self.ledger.material_units.entry(station).or_default() += parts;
        let p = self.config.scrap_probability;
        if p > 0.0 && self.rng.random_bool(p) {
            *self.ledger.waste_units.entry(station).or_default() += 1;
        }
    }

    fn accumulate_energy(&mut self, conveyor_active: bool, elevator_active: &[bool]) {
        let dt = u64::from(self.config.tick_duration);
        let e = self.config.energy_model;
        let mut add = |name: String, mw: u64| {
            *self.ledger.energy_uj.entry(name).or_default() += mw * dt;
        };
        add(points::CONVEYOR.to_string(), e.conveyor.draw(conveyor_active));
        add(points::QUEUE_STOP_DEVICE.to_string(), e.queue_stop.draw(!self.queue.engaged));
        for st in &self.stations {
            add(points::stop_device(st.station_id), e.stop.draw(!st.stop_engaged));
            add(
                points::elevator_device(st.station_id),
                e.elevator.draw(elevator_active[st.station_id - 1]),
            );
        }
    }

    fn refresh_sensors(&mut self) {
        let len = u64::from(self.config.pallet_length);
        let pitch = len + u64::from(self.config.pallet_gap);
        let layout = &self.layout;
        // Pallets lifted off the conveyor by an elevator are invisible to
        // the conveyor's sensors and readers.
        let on_belt = || self.pallets.iter().filter(|p| p.dock.is_none());
        let covered = |point: u64| on_belt().any(|p| layout.covers(p.front, len, point));
        let mut updates = Vec::with_capacity(self.stations.len());
        for st in &self.stations {
            let s = layout.stop_position(st.station_id);
            let a = covered(s);
            let b = covered(layout.back(s, pitch));
            let rfid = on_belt()
                .find(|p| p.front == s)
                .map(|p| p.rfid.clone())
                .unwrap_or_default();
            updates.push((a, b, rfid));
        }
        let queue_sensor = covered(layout.queue_position());
        for (st, (a, b, rfid)) in self.stations.iter_mut().zip(updates) {
            st.pallet_sensors = [a, b];
            st.elevator_sensors = [
                st.elevator_position == ElevatorPosition::Down,
                st.elevator_position == ElevatorPosition::Up,
            ];
            st.rfid = rfid;
        }
        self.queue.sensor = queue_sensor;
    }

    /// Values of all sensor (input) points.
    pub fn sensor_values(&self) -> BTreeMap<String, PointValue> {
        let mut out = BTreeMap::new();
        out.insert(points::QUEUE_SENSOR.to_string(), PointValue::Bool(self.queue.sensor));
        for st in &self.stations {
            let k = st.station_id;
            out.insert(points::pallet_a(k), PointValue::Bool(st.pallet_sensors[0]));
            out.insert(points::pallet_b(k), PointValue::Bool(st.pallet_sensors[1]));
            out.insert(points::elev_a(k), PointValue::Bool(st.elevator_sensors[0]));
            out.insert(points::elev_b(k), PointValue::Bool(st.elevator_sensors[1]));
            out.insert(points::rfid(k), PointValue::Text(st.rfid.clone()));
        }
        out
    }

    /// Values of all actuator (output) points.
    pub fn actuator_values(&self) -> BTreeMap<String, bool> {
        let mut out = BTreeMap::new();
        out.insert(points::QUEUE_STOP.to_string(), self.queue.engaged);
        for st in &self.stations {
            out.insert(points::stop(st.station_id), st.stop_engaged);
            out.insert(points::elev_cmd(st.station_id), st.elevator_cmd);
        }
        out
    }
}
