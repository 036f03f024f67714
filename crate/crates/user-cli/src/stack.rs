//! The whole stack in one process, on a simulated millisecond clock.
//!
//! Device ticks fall on multiples of the tick duration. Frames travel over
//! [`Links`] with per-direction delay, loss and outages. When a frame and a
//! device tick are due at the same instant the frame is delivered first.
//! Everything is a pure function of the config, the seed and the calls
//! made, so two stacks driven the same way produce identical traces.

use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr};
use std::sync::Arc;

use dt_core::{Core, CoreConfig, StreamEvent, DEFAULT_MISSION_TIMEOUT_MS};
use gateway::{BridgeMap, Gateway, KeyStore, NorthId, Output, SharedKeys, Whitelist};
use ome_factory::{points, FactoryConfig, FlowLedger};
use plc_control::{DeviceNode, MissionKind, MissionStatus, Origin};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tag_protocol::{Frame, Scopes, SessionId, SingleKey};

use crate::link::{FaultSpec, LinkDir, LinkId, Links};

pub const DEVICE_KEY_ID: &str = "gateway";
pub const DEVICE_SECRET: &str = "device-secret";
pub const CORE_KEY_ID: &str = "twin";
pub const CORE_SECRET: &str = "twin-secret";

#[derive(Debug, Clone)]
pub struct StackConfig {
    pub factory: FactoryConfig,
    pub seed: u64,
    pub mission_timeout_ms: u64,
    /// Keep a ledger snapshot per tick (KPI checks).
    pub record_ledger: bool,
}

impl StackConfig {
    pub fn new(factory: FactoryConfig, seed: u64) -> Self {
        Self {
            factory,
            seed,
            mission_timeout_ms: DEFAULT_MISSION_TIMEOUT_MS,
            record_ledger: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Hop {
    DeviceToGateway,
    GatewayToDevice,
    CoreToGateway,
    GatewayToCore,
}

impl Hop {
    fn link(self) -> (LinkId, LinkDir) {
        match self {
            Hop::DeviceToGateway => (LinkId::DeviceGateway, LinkDir::Up),
            Hop::GatewayToDevice => (LinkId::DeviceGateway, LinkDir::Down),
            Hop::CoreToGateway => (LinkId::GatewayCore, LinkDir::Down),
            Hop::GatewayToCore => (LinkId::GatewayCore, LinkDir::Up),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Handle {
    /// Ticket at the device's HMI panel.
    Hmi(u64),
    /// Mission id in the twin.
    Core(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub tick: u64,
    pub kind: MissionKind,
    pub origin: Origin,
    pub handle: Handle,
}

/// Where a mission ended up, whichever side tracked it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissionOutcome {
    pub state: String,
    pub reason: Option<String>,
    pub replicated: bool,
}

pub struct Stack {
    device: DeviceNode,
    gateway: Gateway,
    core: Core,
    north: NorthId,
    south: SessionId,
    epoch: u64,
    links: Links,
    rng: ChaCha8Rng,
    now: u64,
    tick_ms: u64,
    next_tick_at: u64,
    inflight: BTreeMap<(u64, u64), (Hop, u64, Frame)>,
    sent: u64,
    reconnect_at: Option<u64>,
    trace: Vec<String>,
    submissions: Vec<Submission>,
    /// Operator mat per station after each scan, indexed by scan.
    mats: Vec<Vec<bool>>,
    ledgers: Vec<FlowLedger>,
    record_ledger: bool,
    initial: BTreeMap<String, String>,
}

impl std::fmt::Debug for Stack {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stack").field("now", &self.now).finish_non_exhaustive()
    }
}

fn loopback() -> IpAddr {
    IpAddr::V4(Ipv4Addr::LOCALHOST)
}

impl Stack {
    pub fn new(cfg: StackConfig) -> anyhow::Result<Self> {
        let tick_ms = u64::from(cfg.factory.tick_duration);
        let stations = cfg.factory.station_count;
        let auth = Arc::new(SingleKey::new(DEVICE_KEY_ID, DEVICE_SECRET, Scopes::ALL));
        let mut device = DeviceNode::new(cfg.factory, auth)?;
        let bridge = BridgeMap::mirror(
            device
                .server()
                .names()
                .map(|n| (n, device.server().access(n).expect("listed tag"))),
        );
        let mapped = bridge.iter().map(|(north, _)| north.to_string()).collect();
        let mut keys = KeyStore::default();
        keys.insert_secret(CORE_KEY_ID, CORE_SECRET, Scopes::ALL);
        let gateway = Gateway::new(
            SharedKeys::new(keys),
            Whitelist::default(),
            bridge,
            format!("{DEVICE_KEY_ID}:{DEVICE_SECRET}"),
        );
        let mut core_cfg = CoreConfig::new(format!("{CORE_KEY_ID}:{CORE_SECRET}"), stations);
        core_cfg.mission_timeout_ms = cfg.mission_timeout_ms;
        core_cfg.mapped_tags = Some(mapped);
        let core = Core::new(core_cfg)?;
        let initial = device
            .factory()
            .point_names()
            .into_iter()
            .filter_map(|n| {
                let v = device.factory().point_value(&n).ok()?;
                Some((n, v.to_string()))
            })
            .collect();
        let south = device.open_session();
        let mut s = Self {
            device,
            gateway,
            core,
            north: 0,
            south,
            epoch: 0,
            links: Links::default(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            now: 0,
            tick_ms,
            next_tick_at: tick_ms,
            inflight: BTreeMap::new(),
            sent: 0,
            reconnect_at: None,
            trace: Vec::new(),
            submissions: Vec::new(),
            mats: vec![vec![false; stations]],
            ledgers: Vec::new(),
            record_ledger: cfg.record_ledger,
            initial,
        };
        if s.record_ledger {
            s.ledgers.push(s.device.factory().snapshot_ledger());
        }
        s.connect();
        Ok(s)
    }

    fn connect(&mut self) {
        let (id, out) = self
            .gateway
            .connect(loopback())
            .expect("loopback is always admitted");
        self.north = id;
        self.route(out);
        for f in self.core.start() {
            self.send(Hop::CoreToGateway, f);
        }
    }

    fn reconnect(&mut self) {
        let _ = self.gateway.disconnect(self.north);
        self.device.close_session(self.south);
        self.epoch += 1;
        self.south = self.device.open_session();
        self.record(self.now / self.tick_ms, "link reconnect".into());
        self.connect();
    }

    pub fn device(&self) -> &DeviceNode {
        &self.device
    }

    pub fn device_mut(&mut self) -> &mut DeviceNode {
        &mut self.device
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn core(&self) -> &Core {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut Core {
        &mut self.core
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn tick_ms(&self) -> u64 {
        self.tick_ms
    }

    pub fn tick(&self) -> u64 {
        self.device.tick()
    }

    pub fn links_mut(&mut self) -> &mut Links {
        &mut self.links
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn submissions(&self) -> &[Submission] {
        &self.submissions
    }

    pub fn mats(&self) -> &[Vec<bool>] {
        &self.mats
    }

    /// Ledger after each tick, from tick 0. Empty unless recording.
    pub fn ledgers(&self) -> &[FlowLedger] {
        &self.ledgers
    }

    pub fn in_flight(&self) -> usize {
        self.inflight.len()
    }

    fn record(&mut self, tick: u64, line: String) {
        self.trace.push(format!("{tick} {line}"));
    }

    fn send(&mut self, hop: Hop, frame: Frame) {
        let (link, dir) = hop.link();
        if let Some(at) = self.links.channel(link, dir).send(self.now, &mut self.rng) {
            self.sent += 1;
            self.inflight.insert((at, self.sent), (hop, self.epoch, frame));
        }
    }

    fn route(&mut self, outputs: Vec<Output>) {
        for o in outputs {
            match o {
                Output::North(id, f) if id == self.north => self.send(Hop::GatewayToCore, f),
                Output::South(id, f) if id == self.north => self.send(Hop::GatewayToDevice, f),
                Output::Close(id) if id == self.north => {
                    self.reconnect_at.get_or_insert(self.now + self.tick_ms);
                }
                _ => {}
            }
        }
    }

    fn drain_device(&mut self) {
        for f in self.device.drain(self.south) {
            self.send(Hop::DeviceToGateway, f);
        }
    }

    fn drain_core_stream(&mut self) {
        for e in self.core.drain_stream() {
            let tick = |ms: u64| ms / self.tick_ms;
            let (t, line) = match e {
                StreamEvent::Thing(ev) => {
                    let data: Vec<String> = ev.data.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    (
                        tick(ev.ms),
                        format!("twin event {} {} {}", ev.thing_id, ev.event, data.join(" "))
                            .trim_end()
                            .to_string(),
                    )
                }
                StreamEvent::Mission {
                    seq,
                    mission_id,
                    state,
                    ms,
                    reason,
                } => {
                    let mut l = format!("twin mission {mission_id} {state:?} seq={seq} ms={ms}");
                    if let Some(r) = reason {
                        l.push_str(&format!(" reason={r}"));
                    }
                    (tick(ms), l)
                }
                StreamEvent::Replication(r) => (
                    tick(r.ms),
                    format!(
                        "twin replicate mission={} station={} seq={} ms={} effective_ms={}",
                        r.mission_id, r.station, r.seq, r.ms, r.effective_ms
                    ),
                ),
                StreamEvent::Stale { ms, reason } => (tick(ms), format!("twin stale {}", reason.replace(' ', "_"))),
                StreamEvent::Estimates { .. } => continue,
            };
            self.record(t, line);
        }
    }

    fn deliver(&mut self, hop: Hop, frame: Frame) {
        match hop {
            Hop::GatewayToDevice => {
                self.device.handle_frame(self.south, &frame);
                self.drain_device();
            }
            Hop::DeviceToGateway => {
                let out = self.gateway.on_south(self.north, &frame);
                self.route(out);
            }
            Hop::CoreToGateway => {
                let out = self.gateway.on_north(self.north, &frame);
                self.route(out);
            }
            Hop::GatewayToCore => {
                for f in self.core.on_frame(&frame, self.now) {
                    self.send(Hop::CoreToGateway, f);
                }
                self.drain_core_stream();
            }
        }
    }

    fn step_device(&mut self) {
        let report = self.device.step();
        let t = report.tick;
        for e in &report.events {
            self.record(t, format!("ome {} {}", e.point_name, e.new_value));
        }
        for a in &report.actuations {
            self.record(
                t,
                format!("act {} {} remote={}", a.point, u8::from(a.value), u8::from(a.remote)),
            );
        }
        for (id, st) in &report.output.transitions {
            self.record(t, format!("plc mission {id} {st}"));
        }
        let n = self.device.plc().state().station_count;
        let mats = (1..=n).map(|k| self.device.plc().interlock(k)).collect();
        self.mats.push(mats);
        if self.record_ledger {
            self.ledgers.push(self.device.factory().snapshot_ledger());
        }
        self.drain_device();
    }

    /// Processes every frame delivery and device tick due up to `t`.
    pub fn advance_to(&mut self, t: u64) {
        loop {
            let next_frame = self.inflight.keys().next().map(|(at, _)| *at);
            let next = [Some(self.next_tick_at), next_frame, self.reconnect_at]
                .into_iter()
                .flatten()
                .min()
                .expect("the device always has a next tick");
            if next > t {
                break;
            }
            self.now = self.now.max(next);
            while let Some(entry) = self.inflight.first_entry() {
                if entry.key().0 > self.now {
                    break;
                }
                let (hop, epoch, frame) = entry.remove();
                if epoch == self.epoch {
                    self.deliver(hop, frame);
                }
            }
            if self.reconnect_at.is_some_and(|r| r <= self.now) {
                self.reconnect_at = None;
                self.reconnect();
            }
            if self.next_tick_at == self.now {
                self.step_device();
                self.next_tick_at += self.tick_ms;
            }
            self.core.poll(self.now);
            self.drain_core_stream();
        }
        self.now = self.now.max(t);
        self.core.poll(self.now);
        self.drain_core_stream();
    }

    /// Runs up to the instant before tick `tick` is stepped.
    pub fn advance_before_tick(&mut self, tick: u64) {
        let at = tick * self.tick_ms;
        if at > 0 {
            self.advance_to(at - 1);
        }
        self.now = self.now.max(at);
    }

    pub fn run_ticks(&mut self, n: u64) {
        let end = (self.device.tick() + n) * self.tick_ms;
        self.advance_to(end);
    }

    /// Stops the device and delivers everything still in flight. Ends the
    /// run: the device never steps again.
    pub fn settle(&mut self) {
        self.next_tick_at = u64::MAX;
        while let Some(last) = self.inflight.keys().map(|(at, _)| *at).max() {
            self.advance_to(last);
        }
    }

    pub fn submit(&mut self, kind: MissionKind, origin: Origin) -> Handle {
        let tick = self.now / self.tick_ms;
        let handle = match origin {
            Origin::Hmi => Handle::Hmi(self.device.panel_submit(kind)),
            _ => {
                let (id, frames) = self.core.request_mission(kind, origin, self.now);
                for f in frames {
                    self.send(Hop::CoreToGateway, f);
                }
                self.drain_core_stream();
                Handle::Core(id)
            }
        };
        self.submissions.push(Submission {
            tick,
            kind,
            origin,
            handle,
        });
        handle
    }

    /// An operator stepping on or off the mat, at the line.
    pub fn interlock(&mut self, station: usize, on: bool) {
        let _ = self.device.set_operator_mat(station, on);
        let tick = self.now / self.tick_ms;
        self.record(tick, format!("mat {station} {}", u8::from(on)));
    }

    pub fn fault(&mut self, f: &FaultSpec) {
        if let Some(until) = self.links.apply(f, self.now, self.tick_ms) {
            let r = self.reconnect_at.map_or(until, |r| r.max(until));
            self.reconnect_at = Some(r);
        }
    }

    pub fn outcome(&self, handle: Handle) -> MissionOutcome {
        match handle {
            Handle::Core(id) => {
                let rec = self.core.mission(id).expect("submitted through the core");
                MissionOutcome {
                    state: format!("{:?}", rec.state),
                    reason: rec.reason.clone(),
                    replicated: self.core.replications().iter().any(|r| r.mission_id == id),
                }
            }
            Handle::Hmi(ticket) => match self.device.panel_decision(ticket) {
                None => MissionOutcome {
                    state: "Requested".into(),
                    reason: None,
                    replicated: false,
                },
                Some(d) => match d.result {
                    Err(r) => MissionOutcome {
                        state: "Rejected".into(),
                        reason: Some(r.to_string()),
                        replicated: false,
                    },
                    Ok(id) => {
                        let m = &self.device.plc().state().missions[&id];
                        MissionOutcome {
                            state: m.status.to_string(),
                            reason: m.fail_reason.map(|r| r.to_string()),
                            replicated: false,
                        }
                    }
                },
            },
        }
    }

    /// Bound Thing properties that differ from the device's tags.
    pub fn mirror_mismatches(&self) -> Vec<String> {
        let mut out = Vec::new();
        for thing in self.core.model().things() {
            for (prop, north) in &thing.bindings {
                let south = north.strip_prefix("DT/").unwrap_or(north);
                let truth = self
                    .device
                    .tag_table()
                    .get(south)
                    .map(|e| e.value.clone())
                    .or_else(|| self.device.server().value(south).cloned());
                let mine = thing.properties.get(prop).map(|p| &p.value);
                match (truth, mine) {
                    (Some(t), Some(m)) if t.bit_eq(m) => {}
                    (t, m) => out.push(format!("{}.{prop} ({north}): device {t:?}, twin {m:?}", thing.thing_id)),
                }
            }
        }
        out
    }

    /// Values a factory point took over the run, starting from its initial
    /// value, with repeats collapsed.
    pub fn point_history(&self, point: &str) -> Vec<String> {
        let mut hist: Vec<String> = self.initial.get(point).cloned().into_iter().collect();
        for line in &self.trace {
            let mut w = line.split_whitespace().skip(1);
            if let (Some("ome" | "act"), Some(p), Some(v)) = (w.next(), w.next(), w.next()) {
                if p == point && hist.last().map(String::as_str) != Some(v) {
                    hist.push(v.to_string());
                }
            }
        }
        hist
    }

    /// Current simulated truth for a mission the PLC knows about.
    pub fn plc_status(&self, plc_id: u64) -> Option<MissionStatus> {
        self.device.plc().state().missions.get(&plc_id).map(|m| m.status)
    }

    pub fn divergence(&mut self) -> Vec<(String, Option<u64>)> {
        let now = self.now;
        self.core.divergence(self.device.factory(), now)
    }

    /// Actuations driven remotely at a station whose mat was engaged in
    /// that same scan.
    pub fn interlock_violations(&self) -> Vec<String> {
        self.device
            .audit_log()
            .iter()
            .filter(|a| a.remote)
            .filter_map(|a| {
                let k = points::Point::parse(&a.point)?.station()?;
                let engaged = self.mats.get(a.scan as usize)?.get(k - 1).copied()?;
                engaged.then(|| format!("scan {} {}={}", a.scan, a.point, a.value))
            })
            .collect()
    }
}
