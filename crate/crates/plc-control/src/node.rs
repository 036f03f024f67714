use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use ome_factory::{points, FactoryConfig, FactoryError, FactoryState, FlowLedger, SensorEvent};
use tag_protocol::{
    Access, Authenticator, ErrorCode, Frame, Quality, SessionId, TagSample, TagServer, TagValue,
    WriteCommand,
};

use crate::logic::{Decision, ScanOutput};
use crate::mission::{Mission, MissionKind, MissionRequest, Origin};
use crate::plc::{Plc, PlcError};
use crate::tags::{
    energy_tag, material_tag, mission_status_tag, operator_mat, point_to_tag, waste_tag, TagTable,
    CFG_AMR_DWELL_MS, CFG_LAYOUT, CFG_PALLETS, CFG_PALLET_GAP, CFG_PALLET_LEN, CFG_SPEED,
    CFG_STATIONS, CFG_TICK_MS,
};

/// Mission request tag. A WRITE of a request string here is answered once
/// the next scan has decided it.
pub const MISSION_REQ: &str = "SYS.MISSION_REQ";

/// One actuator write applied to the factory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Actuation {
    pub scan: u64,
    pub point: String,
    pub value: bool,
    /// Whether a remote command (mission or override) drove this station.
    pub remote: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub tick: u64,
    pub events: Vec<SensorEvent>,
    pub output: ScanOutput,
    pub actuations: Vec<Actuation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Waiter {
    Network { session: SessionId, req: u32 },
    Panel,
}

fn clamp_i32(v: u64) -> i32 {
    i32::try_from(v).unwrap_or(i32::MAX)
}

/// Read-only tags describing the line's configuration.
pub fn config_tags(cfg: &FactoryConfig) -> Vec<(String, TagValue)> {
    let join = |xs: Vec<String>| xs.join(",");
    vec![
        (CFG_STATIONS.into(), TagValue::Int(cfg.station_count as i32)),
        (CFG_SPEED.into(), TagValue::Int(cfg.conveyor_speed as i32)),
        (CFG_TICK_MS.into(), TagValue::Int(cfg.tick_duration as i32)),
        (CFG_PALLET_LEN.into(), TagValue::Int(cfg.pallet_length as i32)),
        (CFG_PALLET_GAP.into(), TagValue::Int(cfg.pallet_gap as i32)),
        (CFG_AMR_DWELL_MS.into(), TagValue::Int(cfg.amr_dwell_ms as i32)),
        (
            CFG_LAYOUT.into(),
            TagValue::Str(join(cfg.segment_lengths.iter().map(u32::to_string).collect())),
        ),
        (
            CFG_PALLETS.into(),
            TagValue::Str(join((0..cfg.pallet_count).map(points::pallet_rfid).collect())),
        ),
    ]
}

fn ledger_tags(ledger: &FlowLedger) -> Vec<(String, TagValue)> {
    let mut out = Vec::new();
    for (device, uj) in &ledger.energy_uj {
        out.push((energy_tag(device), TagValue::Float(*uj as f64)));
    }
    for (k, n) in &ledger.material_units {
        out.push((material_tag(*k), TagValue::Int(clamp_i32(*n))));
    }
    for (k, n) in &ledger.waste_units {
        out.push((waste_tag(*k), TagValue::Int(clamp_i32(*n))));
    }
    out
}

fn mission_text(m: Option<&Mission>) -> TagValue {
    TagValue::Str(match m {
        Some(m) => format!(
            "{}:{}:{}",
            m.id,
            m.status,
            MissionRequest {
                kind: m.kind,
                origin: m.origin
            }
        ),
        None => String::new(),
    })
}

/// The device layer: simulated factory, PLC and tag server advancing in
/// lock step. Only [`DeviceNode::step`] writes factory actuators, and only
/// from scan outputs.
pub struct DeviceNode {
    factory: FactoryState,
    plc: Plc,
    inputs: TagTable,
    server: TagServer,
    waiting: BTreeMap<u64, Waiter>,
    panel_decisions: BTreeMap<u64, Decision>,
    faulted: BTreeSet<String>,
    audit: Vec<Actuation>,
    refused: Vec<(u64, String)>,
}

impl std::fmt::Debug for DeviceNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeviceNode")
            .field("tick", &self.factory.tick_index())
            .finish_non_exhaustive()
    }
}

impl DeviceNode {
    pub fn new(config: FactoryConfig, auth: Arc<dyn Authenticator>) -> Result<Self, FactoryError> {
        Ok(Self::from_factory(FactoryState::new(config)?, auth))
    }

    /// Wraps an already-built (possibly hand-arranged) factory.
    pub fn from_factory(factory: FactoryState, auth: Arc<dyn Authenticator>) -> Self {
        let cfg = factory.config().clone();
        let n = cfg.station_count;
        let mut inputs = TagTable::for_line(n);
        let mut server = TagServer::new(auth);
        let t = factory.tick_index();
        for (name, v) in factory.sensor_values() {
            inputs
                .set(&name, point_to_tag(&v), Quality::Good, t)
                .expect("factory points are in the table");
        }
        for (name, v) in factory.actuator_values() {
            inputs
                .set(&name, TagValue::Bool(v), Quality::Good, t)
                .expect("factory points are in the table");
        }
        for (name, e) in inputs.iter() {
            let access = match points::Point::parse(name) {
                Some(points::Point::Stop(_) | points::Point::ElevCmd(_)) => Access::Write,
                Some(_) => Access::ReadOnly,
                None => Access::Write, // operator mats
            };
            server
                .register(name, e.value.clone(), access)
                .expect("unique tag names");
        }
        server
            .register(MISSION_REQ, TagValue::Str(String::new()), Access::Mission)
            .expect("unique tag names");
        for k in 1..=n {
            server
                .register(&mission_status_tag(k), mission_text(None), Access::ReadOnly)
                .expect("unique tag names");
        }
        for (name, v) in ledger_tags(&factory.snapshot_ledger())
            .into_iter()
            .chain(config_tags(&cfg))
        {
            server
                .register(&name, v, Access::ReadOnly)
                .expect("unique tag names");
        }
        Self {
            plc: Plc::new(n, cfg.queue_capacity),
            factory,
            inputs,
            server,
            waiting: BTreeMap::new(),
            panel_decisions: BTreeMap::new(),
            faulted: BTreeSet::new(),
            audit: Vec::new(),
            refused: Vec::new(),
        }
    }

    pub fn factory(&self) -> &FactoryState {
        &self.factory
    }

    pub fn plc(&self) -> &Plc {
        &self.plc
    }

    pub fn plc_mut(&mut self) -> &mut Plc {
        &mut self.plc
    }

    pub fn server(&self) -> &TagServer {
        &self.server
    }

    pub fn tag_table(&self) -> &TagTable {
        &self.inputs
    }

    pub fn tick(&self) -> u64 {
        self.factory.tick_index()
    }

    /// Every actuator write ever applied, in order.
    pub fn audit_log(&self) -> &[Actuation] {
        &self.audit
    }

    /// Override tickets the PLC refused, with the reason.
    pub fn refused_overrides(&self) -> &[(u64, String)] {
        &self.refused
    }

    pub fn open_session(&mut self) -> SessionId {
        self.server.open_session()
    }

    pub fn close_session(&mut self, id: SessionId) {
        self.server.close_session(id);
        self.waiting
            .retain(|_, w| !matches!(w, Waiter::Network { session, .. } if *session == id));
    }

    pub fn drain(&mut self, id: SessionId) -> Vec<Frame> {
        self.server.drain(id)
    }

    /// Feeds one request frame from a network session.
    pub fn handle_frame(&mut self, session: SessionId, frame: &Frame) {
        for cmd in self.server.handle_request(session, frame) {
            self.dispatch(cmd);
        }
    }

    fn dispatch(&mut self, cmd: WriteCommand) {
        if cmd.name == MISSION_REQ {
            let text = cmd.value.as_str().unwrap_or_default();
            match text.parse::<MissionRequest>() {
                Ok(req) => {
                    let ticket = self.plc.submit_mission(req.kind, req.origin);
                    self.waiting.insert(
                        ticket,
                        Waiter::Network {
                            session: cmd.session,
                            req: cmd.req_seq,
                        },
                    );
                }
                Err(e) => {
                    self.server
                        .reply_err(cmd.session, cmd.req_seq, ErrorCode::BadPayload, Some(&e));
                }
            }
            return;
        }
        let value = cmd.value.as_bool().unwrap_or(false);
        if let Some(k) = cmd
            .name
            .strip_prefix("SYS.OPERATOR_MAT_")
            .and_then(|k| k.parse::<usize>().ok())
        {
            let _ = self.plc.set_interlock(k, value);
        } else if let Err(e) = self.plc.override_actuator(&cmd.name, value) {
            self.refused.push((0, e.to_string()));
        }
    }

    /// Mission request from the local HMI panel.
    pub fn panel_submit(&mut self, kind: MissionKind) -> u64 {
        let ticket = self.plc.submit_mission(kind, Origin::Hmi);
        self.waiting.insert(ticket, Waiter::Panel);
        ticket
    }

    pub fn panel_decision(&self, ticket: u64) -> Option<&Decision> {
        self.panel_decisions.get(&ticket)
    }

    /// An operator stepping on or off the mat at station `k`.
    pub fn set_operator_mat(&mut self, station: usize, present: bool) -> Result<(), PlcError> {
        self.plc.set_interlock(station, present)
    }

    /// Marks a sensor input as failed (Stale) or recovered.
    pub fn set_input_fault(&mut self, name: &str, faulted: bool) {
        if faulted {
            self.faulted.insert(name.to_string());
        } else {
            self.faulted.remove(name);
        }
    }

    /// One tick: advance the factory, scan, apply outputs, answer decided
    /// requests and publish every changed tag at the new tick.
    pub fn step(&mut self) -> StepReport {
        let events = self.factory.tick();
        let tick = self.factory.tick_index();
        for (name, v) in self.factory.sensor_values() {
            let q = if self.faulted.contains(&name) {
                Quality::Stale
            } else {
                Quality::Good
            };
            if q == Quality::Stale {
                // A failed input holds its last value.
                let _ = self.inputs.set_quality(&name, q);
            } else {
                let _ = self.inputs.set(&name, point_to_tag(&v), q, tick);
            }
        }

        let output = self.plc.scan(&self.inputs);

        let mut actuations = Vec::new();
        let current = self.factory.actuator_values();
        for (name, (value, quality)) in &output.actuators {
            let station = points::Point::parse(name).and_then(|p| p.station());
            let q = *quality;
            if q == Quality::Good && current.get(name) != Some(value) {
                self.factory
                    .actuate(name, *value)
                    .expect("scan outputs name real actuators");
                actuations.push(Actuation {
                    scan: output.scan,
                    point: name.clone(),
                    value: *value,
                    remote: station.is_some_and(|k| output.remote_stations.contains(&k)),
                });
            }
            let _ = self
                .inputs
                .set(name, TagValue::Bool(self.factory.actuator_values()[name]), q, tick);
        }
        self.audit.extend(actuations.iter().cloned());
        for k in 1..=self.plc.state().station_count {
            let _ = self.inputs.set(
                &operator_mat(k),
                TagValue::Bool(self.plc.interlock(k)),
                Quality::Good,
                tick,
            );
        }
        for (ticket, reason) in &output.refused {
            self.refused.push((*ticket, reason.to_string()));
        }

        for d in &output.decisions {
            match self.waiting.remove(&d.ticket) {
                Some(Waiter::Network { session, req }) => {
                    let body = match d.result {
                        Ok(id) => vec![format!("mission_id={id}"), format!("tick={tick}")],
                        Err(r) => vec![format!("rejected={r}"), format!("tick={tick}")],
                    };
                    self.server.reply_ack(session, req, body);
                }
                Some(Waiter::Panel) => {
                    self.panel_decisions.insert(d.ticket, d.clone());
                }
                None => {}
            }
        }

        self.publish(tick);
        StepReport {
            tick,
            events,
            output,
            actuations,
        }
    }

    fn publish(&mut self, tick: u64) {
        let mut current: Vec<(String, TagValue, Quality)> = self
            .inputs
            .iter()
            .map(|(n, e)| (n.to_string(), e.value.clone(), e.quality))
            .collect();
        for k in 1..=self.plc.state().station_count {
            current.push((
                mission_status_tag(k),
                mission_text(self.plc.state().last_mission(k)),
                Quality::Good,
            ));
        }
        for (n, v) in ledger_tags(&self.factory.snapshot_ledger()) {
            current.push((n, v, Quality::Good));
        }
        let changes: Vec<TagSample> = current
            .into_iter()
            .filter(|(n, v, q)| {
                self.server
                    .sample(n)
                    .is_some_and(|s| !s.value.bit_eq(v) || s.quality != *q)
            })
            .map(|(name, value, quality)| TagSample {
                name,
                value,
                quality,
                tick,
            })
            .collect();
        self.server
            .publish_changes(&changes)
            .expect("published tags are registered with matching types");
    }
}
