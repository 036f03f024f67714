//! The twin's event-loop owner. [`Core`] is sans-IO: frames from the
//! gateway go in through [`Core::on_frame`], user requests through
//! [`Core::handle_api`] or the typed methods, and every call returns the
//! frames to send back. Time is passed in as milliseconds on the same
//! clock the device's ticks are measured against.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use ome_factory::{points, FactoryState, Layout};
use plc_control::{Direction, MissionKind, MissionRequest, MissionStatus, Origin, MISSION_REQ};
use serde::Serialize;
use tag_protocol::{Frame, MsgType, Payload, Quality, TagAssignment, TagValue};

use crate::estimator::{Estimator, LineGeometry, PalletEstimate};
use crate::kpi::{KpiHistory, KpiReport, LedgerTag};
use crate::line::{self, north, LINE_THING};
use crate::metrics::SyncMetrics;
use crate::mission::{parse_status, MissionRecord, MissionState};
use crate::model::{ModelError, Thing, ThingEvent, ThingModel, DEFAULT_EVENT_CAPACITY};

pub const DEFAULT_MISSION_TIMEOUT_MS: u64 = 5000;
const STREAM_CAPACITY: usize = 8192;

#[derive(Debug, Clone)]
pub struct CoreConfig {
    /// `key_id:secret` presented to the gateway.
    pub credentials: String,
    pub station_count: usize,
    pub mission_timeout_ms: u64,
    pub event_capacity: usize,
    /// North tags the gateway maps; `None` trusts every binding.
    pub mapped_tags: Option<BTreeSet<String>>,
}

impl CoreConfig {
    pub fn new(credentials: impl Into<String>, station_count: usize) -> Self {
        Self {
            credentials: credentials.into(),
            station_count,
            mission_timeout_ms: DEFAULT_MISSION_TIMEOUT_MS,
            event_capacity: DEFAULT_EVENT_CAPACITY,
            mapped_tags: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pending {
    Auth,
    Subscribe,
    Mission(u64),
    Interlock,
}

/// A twin-side motion caused by a validated mission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Replication {
    pub seq: u64,
    pub mission_id: u64,
    pub station: usize,
    /// When the twin applied it.
    pub ms: u64,
    /// When the motion starts on the twin's clock.
    pub effective_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type")]
pub enum StreamEvent {
    Thing(ThingEvent),
    Mission {
        seq: u64,
        mission_id: u64,
        state: MissionState,
        ms: u64,
        reason: Option<String>,
    },
    Replication(Replication),
    Estimates {
        ms: u64,
        estimates: Vec<PalletEstimate>,
    },
    Stale {
        ms: u64,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApiRequest {
    Things,
    Thing(String),
    SubmitMission {
        kind: String,
        station: usize,
        origin: String,
        direction: Option<String>,
    },
    Missions,
    Mission(u64),
    Estimates,
    Metrics,
    Kpi {
        from: Option<u64>,
        to: Option<u64>,
    },
    Interlock {
        station: usize,
        on: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: serde_json::Value,
}

impl ApiResponse {
    fn ok(body: serde_json::Value) -> Self {
        Self { status: 200, body }
    }

    fn error(status: u16, code: &str, detail: impl Into<String>) -> Self {
        Self {
            status,
            body: serde_json::json!({ "error": code, "detail": detail.into() }),
        }
    }
}

pub struct Core {
    cfg: CoreConfig,
    model: ThingModel,
    estimator: Option<Estimator>,
    missions: BTreeMap<u64, MissionRecord>,
    by_plc: BTreeMap<u64, u64>,
    /// Status seen for a device mission id before its ACK arrived.
    early: BTreeMap<u64, MissionStatus>,
    pending: BTreeMap<u32, Pending>,
    next_seq: u32,
    next_mission: u64,
    authenticated: bool,
    subscribed: bool,
    stale: bool,
    tick_ms: Option<u64>,
    last_tick: Option<u64>,
    kpi: KpiHistory,
    metrics: SyncMetrics,
    order: u64,
    stream: VecDeque<StreamEvent>,
    replications: Vec<Replication>,
}

impl std::fmt::Debug for Core {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Core")
            .field("authenticated", &self.authenticated)
            .field("missions", &self.missions.len())
            .finish_non_exhaustive()
    }
}

impl Core {
    pub fn new(cfg: CoreConfig) -> Result<Self, ModelError> {
        let mut model = ThingModel::new(cfg.event_capacity);
        let mapped = cfg.mapped_tags.clone();
        line::install(&mut model, cfg.station_count, |t| {
            mapped.as_ref().is_none_or(|m| m.contains(t))
        })?;
        Ok(Self {
            cfg,
            model,
            estimator: None,
            missions: BTreeMap::new(),
            by_plc: BTreeMap::new(),
            early: BTreeMap::new(),
            pending: BTreeMap::new(),
            next_seq: 1,
            next_mission: 1,
            authenticated: false,
            subscribed: false,
            stale: false,
            tick_ms: None,
            last_tick: None,
            kpi: KpiHistory::default(),
            metrics: SyncMetrics::default(),
            order: 0,
            stream: VecDeque::new(),
            replications: Vec::new(),
        })
    }

    pub fn config(&self) -> &CoreConfig {
        &self.cfg
    }

    pub fn model(&self) -> &ThingModel {
        &self.model
    }

    pub fn is_ready(&self) -> bool {
        self.authenticated && self.subscribed
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }

    pub fn metrics(&self) -> &SyncMetrics {
        &self.metrics
    }

    pub fn kpi(&self) -> &KpiHistory {
        &self.kpi
    }

    pub fn replications(&self) -> &[Replication] {
        &self.replications
    }

    pub fn missions(&self) -> impl Iterator<Item = &MissionRecord> {
        self.missions.values()
    }

    pub fn mission(&self, id: u64) -> Option<&MissionRecord> {
        self.missions.get(&id)
    }

    pub fn last_tick(&self) -> Option<u64> {
        self.last_tick
    }

    pub fn estimator(&self) -> Option<&Estimator> {
        self.estimator.as_ref()
    }

    fn request(&mut self, t: MsgType, purpose: Pending, body: String) -> Frame {
        let seq = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1).max(1);
        self.pending.insert(seq, purpose);
        self.metrics.counts.frames_out += 1;
        Frame::text(t, seq, body)
    }

    /// Opening frames: AUTH, then a subscription to every bound tag. Call
    /// again after reconnecting; the subscription snapshot resynchronises
    /// every Thing. Mission requests from the old connection are left to
    /// time out.
    pub fn start(&mut self) -> Vec<Frame> {
        self.authenticated = false;
        self.subscribed = false;
        self.pending
            .retain(|_, p| !matches!(p, Pending::Auth | Pending::Subscribe | Pending::Interlock));
        let auth = self.request(MsgType::Auth, Pending::Auth, self.cfg.credentials.clone());
        let mut names: Vec<String> = self.model.bound_tags().map(str::to_string).collect();
        names.sort();
        let sub = self.request(MsgType::Subscribe, Pending::Subscribe, names.join("\n"));
        vec![auth, sub]
    }

    fn push_stream(&mut self, e: StreamEvent) {
        if self.stream.len() == STREAM_CAPACITY {
            self.stream.pop_front();
        }
        self.stream.push_back(e);
    }

    /// Stream events since the last drain, oldest first.
    pub fn drain_stream(&mut self) -> Vec<StreamEvent> {
        self.stream.drain(..).collect()
    }

    fn next_order(&mut self) -> u64 {
        self.order += 1;
        self.order
    }

    fn set_state(&mut self, id: u64, to: MissionState, now: u64, reason: Option<String>) {
        let Some(rec) = self.missions.get_mut(&id) else {
            return;
        };
        if rec.transition(to, now).is_err() {
            return;
        }
        if reason.is_some() {
            rec.reason = reason.clone();
        }
        let seq = self.next_order();
        self.push_stream(StreamEvent::Mission {
            seq,
            mission_id: id,
            state: to,
            ms: now,
            reason,
        });
    }

    pub fn on_frame(&mut self, frame: &Frame, now: u64) -> Vec<Frame> {
        self.metrics.counts.frames_in += 1;
        let Ok(p) = Payload::parse_bytes(frame.payload()) else {
            return Vec::new();
        };
        match frame.msg_type() {
            MsgType::Ack => self.on_ack(&p, now),
            MsgType::Err => self.on_err(&p, now),
            MsgType::Publish => self.on_publish(&p, now),
            _ => {}
        }
        Vec::new()
    }

    fn on_ack(&mut self, p: &Payload, now: u64) {
        let Some(purpose) = p.req.and_then(|r| self.pending.remove(&r)) else {
            return;
        };
        match purpose {
            Pending::Auth => self.authenticated = true,
            Pending::Subscribe => {
                self.subscribed = true;
                self.stale = false;
                let last = self.last_tick.unwrap_or(0);
                self.apply_batch(p, p.tick, now);
                if let Some(t) = p.tick {
                    self.kpi.mark_gap(last, t);
                }
            }
            Pending::Mission(id) => {
                if let Some(plc) = p.field("mission_id").and_then(|v| v.parse::<u64>().ok()) {
                    let tick = p.field("tick").and_then(|v| v.parse().ok());
                    self.validated(id, plc, tick, now);
                } else {
                    let reason = p.field("rejected").unwrap_or("Unknown").to_string();
                    self.set_state(id, MissionState::Rejected, now, Some(reason));
                }
            }
            Pending::Interlock => {}
        }
    }

    fn on_err(&mut self, p: &Payload, now: u64) {
        let code = p.field("code").unwrap_or("Unknown").to_string();
        let Some(req) = p.req else {
            // The session was dropped on the far side.
            self.go_stale(now, format!("session closed: {code}"));
            return;
        };
        match self.pending.remove(&req) {
            Some(Pending::Mission(id)) => {
                let reason = if code == "Unauthenticated" {
                    "Unauthorized".to_string()
                } else {
                    code
                };
                self.set_state(id, MissionState::Rejected, now, Some(reason));
            }
            Some(Pending::Auth) => self.authenticated = false,
            Some(Pending::Subscribe) => self.go_stale(now, format!("subscribe refused: {code}")),
            _ => {}
        }
    }

    fn validated(&mut self, id: u64, plc: u64, tick: Option<u64>, now: u64) {
        if self.missions.get(&id).is_none_or(|r| r.state != MissionState::Requested) {
            return;
        }
        if let Some(r) = self.missions.get_mut(&id) {
            r.plc_mission_id = Some(plc);
            r.validated_tick = tick;
        }
        self.by_plc.insert(plc, id);
        self.set_state(id, MissionState::Validated, now, None);
        if let Some(req) = self.missions.get(&id).map(|r| r.entered(MissionState::Requested).unwrap_or(now)) {
            self.metrics.mission_rtt_ms.record(now.saturating_sub(req));
        }
        // Only now does the twin replicate the motion.
        let kind = self.missions[&id].kind;
        if let (MissionKind::PassDockingStation(k), Some(tick_ms)) = (kind, self.tick_ms) {
            let effective = tick.map_or(now, |t| (t + 1) * tick_ms);
            if let Some(e) = self.estimator.as_mut() {
                e.set_stop(k, false, effective, now);
            }
            let r = Replication {
                seq: self.next_order(),
                mission_id: id,
                station: k,
                ms: now,
                effective_ms: effective,
            };
            self.replications.push(r.clone());
            self.push_stream(StreamEvent::Replication(r));
        }
        if let Some(status) = self.early.remove(&plc) {
            self.on_status(plc, status, now);
        }
    }

    fn on_status(&mut self, plc: u64, status: MissionStatus, now: u64) {
        let Some(&id) = self.by_plc.get(&plc) else {
            self.early.insert(plc, status);
            return;
        };
        let state = self.missions[&id].state;
        match status {
            MissionStatus::Validated => {}
            MissionStatus::Executing => {
                if state == MissionState::Validated {
                    self.set_state(id, MissionState::Executing, now, None);
                }
            }
            MissionStatus::Completed => {
                if state == MissionState::Validated {
                    self.set_state(id, MissionState::Executing, now, None);
                }
                self.set_state(id, MissionState::Completed, now, None);
            }
            MissionStatus::Failed => {
                self.set_state(id, MissionState::Failed, now, Some("InterlockEngaged".into()));
            }
        }
    }

    fn on_publish(&mut self, p: &Payload, now: u64) {
        self.metrics.counts.publishes += 1;
        if self.stale {
            self.stale = false;
        }
        if let (Some(tick), Some(tick_ms)) = (p.tick, self.tick_ms) {
            self.metrics
                .telemetry_latency_ms
                .record(now.saturating_sub(tick * tick_ms));
        }
        self.apply_batch(p, p.tick, now);
    }

    fn apply_batch(&mut self, p: &Payload, tick: Option<u64>, now: u64) {
        let Ok(assignments) = p.assignments() else {
            return;
        };
        if let Some(t) = tick {
            self.last_tick = Some(self.last_tick.map_or(t, |l| l.max(t)));
        }
        let stale: BTreeSet<&str> = p.stale.iter().map(String::as_str).collect();
        let first_config = self.estimator.is_none();
        let mut ledger_changed = false;
        let mut moved = false;
        let src = tick.zip(self.tick_ms).map(|(t, ms)| t * ms);
        let updates: Vec<(&str, &TagValue, Quality)> = assignments
            .iter()
            .map(|a| {
                let q = if stale.contains(a.name.as_str()) {
                    Quality::Stale
                } else {
                    Quality::Good
                };
                (a.name.as_str(), &a.value, q)
            })
            .collect();
        let mut order = self.order;
        let r = self.model.apply_batch(&updates, src, tick, now, &mut order);
        self.order = order;
        self.metrics.counts.unknown_tags += r.unknown as u64;
        self.metrics.counts.tag_updates += r.updated as u64;
        self.metrics.counts.events_fired += r.events.len() as u64;
        for e in r.events {
            self.push_stream(StreamEvent::Thing(e));
        }
        for a in &assignments {
            if let Some(lt) = LedgerTag::parse(&a.name) {
                let v = match &a.value {
                    TagValue::Float(f) => f.max(0.0).round() as u64,
                    TagValue::Int(i) => (*i).max(0) as u64,
                    _ => continue,
                };
                ledger_changed |= self.kpi.set(&lt, v);
            }
        }
        if first_config {
            self.try_build_estimator();
        }
        for a in &assignments {
            moved |= self.side_effect(a, tick, now);
        }
        if ledger_changed || (tick.is_none() && self.kpi.latest_tick().is_none()) {
            let at = tick.or(self.last_tick).unwrap_or(0);
            self.kpi.snapshot(at);
        }
        if moved && self.estimator.is_some() {
            let estimates = self.estimates(now);
            self.push_stream(StreamEvent::Estimates { ms: now, estimates });
        }
    }

    /// Feeds the estimator. Returns whether any estimate may have moved.
    fn side_effect(&mut self, a: &TagAssignment, tick: Option<u64>, now: u64) -> bool {
        let Some(tag) = a.name.strip_prefix("DT/") else {
            return false;
        };
        if tag.starts_with("SYS.MISSION_") {
            if let Some((plc, status)) = a.value.as_str().and_then(parse_status) {
                self.on_status(plc, status, now);
            }
            return false;
        }
        let src = match (tick, self.tick_ms) {
            (Some(t), Some(ms)) => t * ms,
            _ => now,
        };
        let Some(est) = self.estimator.as_mut() else {
            return false;
        };
        if tag == points::QUEUE_STOP {
            if let Some(b) = a.value.as_bool() {
                est.set_queue(b, src, now);
                return true;
            }
        }
        let Some(p) = points::Point::parse(tag) else {
            return false;
        };
        match (p, &a.value) {
            (points::Point::Stop(k), TagValue::Bool(b)) => {
                est.set_stop(k, *b, src, now);
                true
            }
            (points::Point::Rfid(k), TagValue::Str(id)) if !id.is_empty() => {
                est.checkpoint(id, k, src, now);
                true
            }
            _ => false,
        }
    }

    fn line_int(&self, prop: &str) -> Option<u64> {
        let v = self.model.thing(LINE_THING)?.properties.get(prop)?;
        if !v.initialized {
            return None;
        }
        v.value.as_int().and_then(|i| u64::try_from(i).ok())
    }

    fn line_str(&self, prop: &str) -> Option<String> {
        let v = self.model.thing(LINE_THING)?.properties.get(prop)?;
        v.initialized.then(|| v.value.as_str().map(str::to_string)).flatten()
    }

    /// Line geometry as published by the configuration thing.
    pub fn geometry(&self) -> Option<LineGeometry> {
        let tick_ms = self.line_int("TickMs").filter(|t| *t > 0)?;
        let segments: Vec<u32> = self
            .line_str("Layout")?
            .split(',')
            .map(|s| s.trim().parse().ok())
            .collect::<Option<_>>()?;
        if segments.len() < 2 || segments.len() != self.line_int("Stations")? as usize + 1 {
            return None;
        }
        let dwell = self.line_int("AmrDwellMs")?;
        Some(LineGeometry {
            layout: Layout::new(&segments),
            speed: self.line_int("Speed")?,
            tick_ms,
            pallet_length: self.line_int("PalletLength")?,
            pallet_gap: self.line_int("PalletGap")?,
            dwell_ms: dwell / tick_ms * tick_ms,
            pallets: self
                .line_str("Pallets")?
                .split(',')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
        })
    }

    fn try_build_estimator(&mut self) {
        if let Some(g) = self.geometry() {
            self.tick_ms = Some(g.tick_ms);
            self.estimator = Some(Estimator::new(g));
        }
    }

    fn go_stale(&mut self, now: u64, reason: String) {
        if !self.stale {
            self.stale = true;
            self.model.mark_stale();
            self.push_stream(StreamEvent::Stale { ms: now, reason });
        }
    }

    /// Times out missions with no progress. Call periodically.
    pub fn poll(&mut self, now: u64) {
        let timeout = self.cfg.mission_timeout_ms;
        let overdue: Vec<u64> = self
            .missions
            .values()
            .filter(|r| !r.state.is_terminal() && now.saturating_sub(r.last_change_ms()) >= timeout)
            .map(|r| r.mission_id)
            .collect();
        for id in overdue {
            self.pending.retain(|_, p| *p != Pending::Mission(id));
            self.set_state(id, MissionState::TimedOut, now, Some("NoResponse".into()));
            self.go_stale(now, format!("mission {id} timed out"));
        }
    }

    /// Sends a mission request to the device. The returned id is local.
    pub fn request_mission(&mut self, kind: MissionKind, origin: Origin, now: u64) -> (u64, Vec<Frame>) {
        let id = self.next_mission;
        self.next_mission += 1;
        self.missions.insert(id, MissionRecord::new(id, kind, origin, now));
        let seq = self.next_order();
        self.push_stream(StreamEvent::Mission {
            seq,
            mission_id: id,
            state: MissionState::Requested,
            ms: now,
            reason: None,
        });
        let req = MissionRequest { kind, origin };
        let body = tag_protocol::payload::format_assignment(&TagAssignment::new(
            north(MISSION_REQ),
            TagValue::Str(req.to_string()),
        ));
        let frame = self.request(MsgType::Write, Pending::Mission(id), body);
        (id, vec![frame])
    }

    pub fn set_interlock(&mut self, station: usize, on: bool) -> Vec<Frame> {
        let body = tag_protocol::payload::format_assignment(&TagAssignment::new(
            north(&plc_control::operator_mat(station)),
            TagValue::Bool(on),
        ));
        vec![self.request(MsgType::Write, Pending::Interlock, body)]
    }

    pub fn estimates(&mut self, now: u64) -> Vec<PalletEstimate> {
        self.estimator.as_mut().map_or_else(Vec::new, |e| e.estimates(now))
    }

    /// Per-pallet error against the simulated factory, recorded into the
    /// sync metrics. Harness use only.
    pub fn divergence(&mut self, truth: &FactoryState, now: u64) -> Vec<(String, Option<u64>)> {
        let Some(e) = self.estimator.as_mut() else {
            return Vec::new();
        };
        let d = e.divergence(truth, now);
        for (id, err) in &d {
            if let Some(mm) = err {
                self.metrics.divergence_mm.record(*mm);
                self.metrics.last_divergence_mm.insert(id.clone(), *mm);
            }
        }
        d
    }

    pub fn kpi_report(&self, from: Option<u64>, to: Option<u64>) -> KpiReport {
        let to = to.or(self.kpi.latest_tick()).unwrap_or(0);
        self.kpi.report(from.unwrap_or(0), to)
    }

    fn thing_json(t: &Thing, with_events: bool) -> serde_json::Value {
        let mut v = serde_json::json!({
            "thing_id": t.thing_id,
            "template": t.template,
            "properties": t.properties,
            "bindings": t.bindings,
            "events_logged": t.events.len(),
            "events_dropped": t.events_dropped,
        });
        if with_events {
            v["events"] = serde_json::json!(t.events);
        }
        v
    }

    pub fn handle_api(&mut self, req: ApiRequest, now: u64) -> (ApiResponse, Vec<Frame>) {
        let ok = |v| (ApiResponse::ok(v), Vec::new());
        match req {
            ApiRequest::Things => ok(serde_json::Value::Array(
                self.model.things().map(|t| Self::thing_json(t, false)).collect(),
            )),
            ApiRequest::Thing(id) => match self.model.thing(&id) {
                Some(t) => ok(Self::thing_json(t, true)),
                None => (ApiResponse::error(404, "UnknownThing", id), Vec::new()),
            },
            ApiRequest::SubmitMission {
                kind,
                station,
                origin,
                direction,
            } => {
                let Some(origin) = Origin::parse(&origin) else {
                    return (ApiResponse::error(400, "BadRequest", format!("origin `{origin}`")), Vec::new());
                };
                let kind = match kind.to_ascii_lowercase().as_str() {
                    "passdockingstation" | "pass" => MissionKind::PassDockingStation(station),
                    "elevatortransfer" | "elevator" => {
                        let d = match direction.as_deref().map(str::to_ascii_lowercase).as_deref() {
                            Some("up") => Direction::Up,
                            Some("down") => Direction::Down,
                            _ => {
                                return (
                                    ApiResponse::error(400, "BadRequest", "direction must be Up or Down"),
                                    Vec::new(),
                                )
                            }
                        };
                        MissionKind::ElevatorTransfer(station, d)
                    }
                    _ => return (ApiResponse::error(400, "BadRequest", format!("kind `{kind}`")), Vec::new()),
                };
                let (id, frames) = self.request_mission(kind, origin, now);
                (ApiResponse::ok(serde_json::json!({ "mission_id": id })), frames)
            }
            ApiRequest::Missions => ok(serde_json::Value::Array(
                self.missions.values().map(MissionRecord::to_json).collect(),
            )),
            ApiRequest::Mission(id) => match self.missions.get(&id) {
                Some(r) => ok(r.to_json()),
                None => (ApiResponse::error(404, "UnknownMission", id.to_string()), Vec::new()),
            },
            ApiRequest::Estimates => {
                let e = self.estimates(now);
                ok(serde_json::json!(e))
            }
            ApiRequest::Metrics => ok(serde_json::json!({
                "stale": self.stale,
                "metrics": self.metrics,
            })),
            ApiRequest::Kpi { from, to } => ok(serde_json::json!(self.kpi_report(from, to))),
            ApiRequest::Interlock { station, on } => {
                if station == 0 || station > self.cfg.station_count {
                    return (ApiResponse::error(404, "UnknownStation", station.to_string()), Vec::new());
                }
                let frames = self.set_interlock(station, on);
                (ApiResponse::ok(serde_json::json!({ "station": station, "on": on })), frames)
            }
        }
    }
}
