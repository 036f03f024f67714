//! Sans-IO bridge. Each admitted north connection gets its own south
//! session, authenticated with the gateway's device credential. North
//! requests are checked here (key, scope, mapping, direction) and only then
//! rewritten and forwarded; south responses are rewritten back.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::IpAddr;

use tag_protocol::server::err_payload;
use tag_protocol::{
    Authenticator, ErrorCode, Frame, Grant, MsgType, NameFilter, Payload, Scope,
    TagAssignment,
};

use crate::bridge::BridgeMap;
use crate::keys::SharedKeys;
use crate::whitelist::Whitelist;

pub type NorthId = u64;

pub const MAX_AUTH_FAILURES: u32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    North(NorthId, Frame),
    South(NorthId, Frame),
    /// Both links of the pair should be closed.
    Close(NorthId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pending {
    DeviceAuth,
    Forward { north_req: u32, kind: MsgType },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionCounters {
    pub north_in: u64,
    pub north_out: u64,
    pub south_in: u64,
    pub south_out: u64,
    /// Requests answered locally with ERR.
    pub rejected: u64,
}

#[derive(Debug)]
struct Session {
    peer: IpAddr,
    grant: Option<Grant>,
    failures: u32,
    next_north_seq: u32,
    next_south_seq: u32,
    pending: BTreeMap<u32, Pending>,
    south_ready: bool,
    counters: SessionCounters,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GatewayStats {
    pub admitted: u64,
    pub denied: u64,
    pub auth_failures: u64,
    pub forwarded: u64,
    pub rejected: u64,
    pub device_auth_failures: u64,
}

#[derive(Debug)]
pub struct Gateway {
    keys: SharedKeys,
    whitelist: Whitelist,
    bridge: BridgeMap,
    device_credentials: String,
    sessions: BTreeMap<NorthId, Session>,
    next_id: NorthId,
    stats: GatewayStats,
}

type Reject = (ErrorCode, Vec<(&'static str, String)>);

fn reject(code: ErrorCode) -> Reject {
    (code, Vec::new())
}

fn reject_with(code: ErrorCode, key: &'static str, value: impl Into<String>) -> Reject {
    (code, vec![(key, value.into())])
}

fn require(grant: &Grant, scope: Scope) -> Result<(), Reject> {
    if grant.scopes.contains(scope) {
        Ok(())
    } else {
        Err(reject_with(ErrorCode::Unauthenticated, "scope", scope.name()))
    }
}

impl Gateway {
    pub fn new(keys: SharedKeys, whitelist: Whitelist, bridge: BridgeMap, device_credentials: impl Into<String>) -> Self {
        Self {
            keys,
            whitelist,
            bridge,
            device_credentials: device_credentials.into(),
            sessions: BTreeMap::new(),
            next_id: 1,
            stats: GatewayStats::default(),
        }
    }

    pub fn keys(&self) -> &SharedKeys {
        &self.keys
    }

    pub fn bridge(&self) -> &BridgeMap {
        &self.bridge
    }

    pub fn whitelist(&self) -> &Whitelist {
        &self.whitelist
    }

    pub fn set_whitelist(&mut self, whitelist: Whitelist) {
        self.whitelist = whitelist;
    }

    pub fn stats(&self) -> GatewayStats {
        self.stats
    }

    pub fn session_ids(&self) -> Vec<NorthId> {
        self.sessions.keys().copied().collect()
    }

    pub fn counters(&self, id: NorthId) -> Option<SessionCounters> {
        self.sessions.get(&id).map(|s| s.counters)
    }

    pub fn grant(&self, id: NorthId) -> Option<&Grant> {
        self.sessions.get(&id).and_then(|s| s.grant.as_ref())
    }

    /// Admission happens before a single byte from the peer is looked at.
    /// On success the caller opens a south session and sends the returned
    /// device AUTH frame on it.
    pub fn connect(&mut self, peer: IpAddr) -> Option<(NorthId, Vec<Output>)> {
        if !self.whitelist.admit(peer) {
            self.stats.denied += 1;
            return None;
        }
        self.stats.admitted += 1;
        let id = self.next_id;
        self.next_id += 1;
        let mut s = Session {
            peer,
            grant: None,
            failures: 0,
            next_north_seq: 0,
            next_south_seq: 1,
            pending: BTreeMap::new(),
            south_ready: false,
            counters: SessionCounters::default(),
        };
        s.pending.insert(0, Pending::DeviceAuth);
        s.counters.south_out += 1;
        self.sessions.insert(id, s);
        let auth = Frame::text(MsgType::Auth, 0, self.device_credentials.clone());
        Some((id, vec![Output::South(id, auth)]))
    }

    pub fn disconnect(&mut self, id: NorthId) -> Vec<Output> {
        match self.sessions.remove(&id) {
            Some(_) => vec![Output::Close(id)],
            None => Vec::new(),
        }
    }

    pub fn peer(&self, id: NorthId) -> Option<IpAddr> {
        self.sessions.get(&id).map(|s| s.peer)
    }

    pub fn south_ready(&self, id: NorthId) -> bool {
        self.sessions.get(&id).is_some_and(|s| s.south_ready)
    }

    fn north_frame(&mut self, id: NorthId, msg_type: MsgType, payload: String) -> Output {
        let s = self.sessions.get_mut(&id).expect("open session");
        let seq = s.next_north_seq;
        s.next_north_seq = s.next_north_seq.wrapping_add(1);
        s.counters.north_out += 1;
        Output::North(id, Frame::text(msg_type, seq, payload))
    }

    fn local_err(&mut self, id: NorthId, req: u32, (code, extra): Reject) -> Output {
        self.stats.rejected += 1;
        if let Some(s) = self.sessions.get_mut(&id) {
            s.counters.rejected += 1;
        }
        let extra: Vec<(&str, &str)> = extra.iter().map(|(k, v)| (*k, v.as_str())).collect();
        self.north_frame(id, MsgType::Err, err_payload(Some(req), code, &extra))
    }

    fn forward(&mut self, id: NorthId, north_req: u32, kind: MsgType, body: Vec<String>) -> Output {
        let s = self.sessions.get_mut(&id).expect("open session");
        let seq = s.next_south_seq;
        s.next_south_seq = s.next_south_seq.wrapping_add(1);
        s.pending.insert(seq, Pending::Forward { north_req, kind });
        s.counters.south_out += 1;
        self.stats.forwarded += 1;
        let payload = Payload {
            body,
            ..Payload::default()
        };
        Output::South(id, Frame::text(kind, seq, payload.render()))
    }

    /// Handles one frame from the north peer.
    pub fn on_north(&mut self, id: NorthId, frame: &Frame) -> Vec<Output> {
        let Some(s) = self.sessions.get_mut(&id) else {
            return Vec::new();
        };
        s.counters.north_in += 1;
        let req = frame.seq();
        if frame.msg_type() == MsgType::Auth {
            return self.north_auth(id, frame);
        }
        let Some(grant) = s.grant.clone() else {
            return vec![self.local_err(id, req, reject(ErrorCode::Unauthenticated))];
        };
        if let Err(f) = self.keys.check(&grant) {
            self.sessions.get_mut(&id).expect("open session").grant = None;
            return vec![self.local_err(id, req, reject(f.into()))];
        }
        let payload = match Payload::parse_bytes(frame.payload()) {
            Ok(p) => p,
            Err(e) => {
                return vec![self.local_err(id, req, reject_with(ErrorCode::BadPayload, "detail", e.to_string()))]
            }
        };
        let body = match frame.msg_type() {
            MsgType::Read => require(&grant, Scope::ReadTags).and_then(|()| self.map_filters(&payload)),
            MsgType::Subscribe => require(&grant, Scope::Subscribe).and_then(|()| self.map_filters(&payload)),
            MsgType::Write => require(&grant, Scope::WriteTags).and_then(|()| self.map_write(&grant, &payload)),
            other => Err(reject_with(ErrorCode::BadPayload, "detail", format!("unexpected {other:?} request"))),
        };
        match body {
            Ok(body) => vec![self.forward(id, req, frame.msg_type(), body)],
            Err(r) => vec![self.local_err(id, req, r)],
        }
    }

    fn north_auth(&mut self, id: NorthId, frame: &Frame) -> Vec<Output> {
        let req = frame.seq();
        let creds = frame.payload_str().unwrap_or("").trim_end_matches('\n');
        match self.keys.authenticate(creds) {
            Ok(grant) => {
                let body = Payload {
                    req: Some(req),
                    body: vec![format!("scopes={}", grant.scopes)],
                    ..Payload::default()
                };
                let s = self.sessions.get_mut(&id).expect("open session");
                s.grant = Some(grant);
                s.failures = 0;
                vec![self.north_frame(id, MsgType::Ack, body.render())]
            }
            Err(f) => {
                self.stats.auth_failures += 1;
                let mut out = vec![self.local_err(id, req, reject(ErrorCode::from(f)))];
                let s = self.sessions.get_mut(&id).expect("open session");
                s.grant = None;
                s.failures += 1;
                if s.failures >= MAX_AUTH_FAILURES {
                    out.extend(self.disconnect(id));
                }
                out
            }
        }
    }

    fn map_filters(&self, payload: &Payload) -> Result<Vec<String>, Reject> {
        if payload.body.is_empty() {
            return Err(reject_with(ErrorCode::BadPayload, "detail", "no names"));
        }
        let mut names = Vec::new();
        for line in &payload.body {
            let f = NameFilter::parse(line)
                .ok_or_else(|| reject_with(ErrorCode::BadPayload, "detail", format!("bad filter {line}")))?;
            let south = self.bridge.expand_read(&f).map_err(|c| reject_with(c, "tag", f.render()))?;
            names.extend(south);
        }
        names.sort();
        names.dedup();
        Ok(names)
    }

    fn map_write(&self, grant: &Grant, payload: &Payload) -> Result<Vec<String>, Reject> {
        let assignments = payload
            .assignments()
            .map_err(|e| reject_with(ErrorCode::BadPayload, "detail", e.to_string()))?;
        if assignments.is_empty() {
            return Err(reject_with(ErrorCode::BadPayload, "detail", "no assignments"));
        }
        let mut body = Vec::with_capacity(assignments.len());
        for a in assignments {
            let entry = self
                .bridge
                .write_target(&a.name)
                .map_err(|c| reject_with(c, "tag", a.name.clone()))?;
            if entry.mission {
                require(grant, Scope::SubmitMission)?;
            }
            let south = TagAssignment::new(entry.south.clone(), a.value);
            body.push(tag_protocol::payload::format_assignment(&south));
        }
        Ok(body)
    }

    fn north_name(&self, south: &str) -> Option<String> {
        self.bridge
            .iter()
            .find(|(_, e)| e.south == south)
            .map(|(n, _)| n.to_string())
    }

    /// Rewrites assignment lines to north names, dropping unreadable ones.
    fn rewrite_assignments(&self, p: &Payload) -> Payload {
        let mut out = Payload {
            req: p.req,
            tick: p.tick,
            ..Payload::default()
        };
        out.stale = p
            .stale
            .iter()
            .filter_map(|n| self.bridge.readable_north(n).map(str::to_string))
            .collect();
        for line in &p.body {
            let Some((name, value)) = line.split_once('=') else { continue };
            if let Some(n) = self.bridge.readable_north(name) {
                out.body.push(format!("{n}={value}"));
            }
        }
        out
    }

    /// Handles one frame from the south (device) side of a session.
    pub fn on_south(&mut self, id: NorthId, frame: &Frame) -> Vec<Output> {
        let Some(s) = self.sessions.get_mut(&id) else {
            return Vec::new();
        };
        s.counters.south_in += 1;
        let Ok(p) = Payload::parse_bytes(frame.payload()) else {
            return Vec::new();
        };
        match frame.msg_type() {
            MsgType::Publish => {
                let mut mapped = self.rewrite_assignments(&p);
                mapped.req = None;
                if mapped.body.is_empty() {
                    return Vec::new();
                }
                vec![self.north_frame(id, MsgType::Publish, mapped.render())]
            }
            MsgType::Ack | MsgType::Err => {
                let is_err = frame.msg_type() == MsgType::Err;
                let Some(req) = p.req else {
                    // Only an overflow ERR comes without @req; the device has
                    // dropped the session.
                    let mut out = Vec::new();
                    if is_err {
                        let body = Payload { body: p.body.clone(), ..Payload::default() };
                        out.push(self.north_frame(id, MsgType::Err, body.render()));
                    }
                    out.extend(self.disconnect(id));
                    return out;
                };
                let pending = s.pending.remove(&req);
                match pending {
                    None => Vec::new(),
                    Some(Pending::DeviceAuth) => {
                        if is_err {
                            self.stats.device_auth_failures += 1;
                        } else {
                            s.south_ready = true;
                        }
                        Vec::new()
                    }
                    Some(Pending::Forward { north_req, kind }) => {
                        let mut mapped = if is_err {
                            let mut m = p.clone();
                            m.body = p
                                .body
                                .iter()
                                .map(|l| match l.strip_prefix("tag=") {
                                    Some(t) => format!("tag={}", self.north_name(t).unwrap_or_else(|| t.to_string())),
                                    None => l.clone(),
                                })
                                .collect();
                            m
                        } else if matches!(kind, MsgType::Read | MsgType::Subscribe) {
                            self.rewrite_assignments(&p)
                        } else {
                            p.clone()
                        };
                        mapped.req = Some(north_req);
                        vec![self.north_frame(id, frame.msg_type(), mapped.render())]
                    }
                }
            }
            _ => Vec::new(),
        }
    }

    /// The device closed its side.
    pub fn south_closed(&mut self, id: NorthId) -> Vec<Output> {
        self.disconnect(id)
    }

    /// `name value` lines, one metric per line.
    pub fn render_metrics(&self) -> String {
        let mut out = String::new();
        let st = self.stats;
        for (name, v) in [
            ("gateway_sessions_open", self.sessions.len() as u64),
            ("gateway_connections_admitted", st.admitted),
            ("gateway_connections_denied", st.denied),
            ("gateway_auth_failures", st.auth_failures),
            ("gateway_requests_forwarded", st.forwarded),
            ("gateway_requests_rejected", st.rejected),
            ("gateway_device_auth_failures", st.device_auth_failures),
        ] {
            let _ = writeln!(out, "{name} {v}");
        }
        for (id, s) in &self.sessions {
            let c = s.counters;
            for (name, v) in [
                ("north_frames_in", c.north_in),
                ("north_frames_out", c.north_out),
                ("south_frames_in", c.south_in),
                ("south_frames_out", c.south_out),
                ("rejected", c.rejected),
            ] {
                let _ = writeln!(out, "gateway_session_{name}{{session=\"{id}\"}} {v}");
            }
        }
        out
    }
}
