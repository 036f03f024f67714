//! Sans-IO tag server. The owner feeds decoded request frames in with
//! [`TagServer::handle_request`], pushes tag changes with
//! [`TagServer::publish_changes`], and drains each session's outbound queue
//! onto its transport.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::auth::{AuthFailure, Authenticator, Grant, Scope};
use crate::frame::{Frame, MsgType};
use crate::payload::{format_assignment, NameFilter, Payload, TagAssignment};
use crate::value::{Quality, TagSample, TagValue};

pub type SessionId = u64;

pub const DEFAULT_QUEUE_LIMIT: usize = 1024;
pub const MAX_AUTH_FAILURES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    UnknownTag,
    ReadOnly,
    BadPayload,
    Unauthenticated,
    Overflow,
    BadKey,
    Revoked,
    UnmappedTag,
    DirectionDenied,
}

impl ErrorCode {
    const ALL: [ErrorCode; 9] = [
        ErrorCode::UnknownTag,
        ErrorCode::ReadOnly,
        ErrorCode::BadPayload,
        ErrorCode::Unauthenticated,
        ErrorCode::Overflow,
        ErrorCode::BadKey,
        ErrorCode::Revoked,
        ErrorCode::UnmappedTag,
        ErrorCode::DirectionDenied,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::UnknownTag => "UnknownTag",
            ErrorCode::ReadOnly => "ReadOnly",
            ErrorCode::BadPayload => "BadPayload",
            ErrorCode::Unauthenticated => "Unauthenticated",
            ErrorCode::Overflow => "Overflow",
            ErrorCode::BadKey => "BadKey",
            ErrorCode::Revoked => "Revoked",
            ErrorCode::UnmappedTag => "UnmappedTag",
            ErrorCode::DirectionDenied => "DirectionDenied",
        }
    }

    pub fn parse(s: &str) -> Option<ErrorCode> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<AuthFailure> for ErrorCode {
    fn from(f: AuthFailure) -> Self {
        match f {
            AuthFailure::BadKey => ErrorCode::BadKey,
            AuthFailure::Revoked => ErrorCode::Revoked,
        }
    }
}

/// Builds an ERR payload: `@req=<seq>`, `code=<code>`, then extra lines.
pub fn err_payload(req: Option<u32>, code: ErrorCode, extra: &[(&str, &str)]) -> String {
    let mut p = Payload {
        req,
        ..Payload::default()
    };
    p.body.push(format!("code={code}"));
    p.body
        .extend(extra.iter().map(|(k, v)| format!("{k}={v}")));
    p.render()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServerError {
    #[error("tag `{0}` already registered")]
    DuplicateTag(String),
    #[error("unknown tag `{0}`")]
    UnknownTag(String),
    #[error("tag `{0}` cannot change type")]
    TypeMismatch(String),
    #[error("invalid value for `{0}`")]
    InvalidValue(String),
}

/// What a network WRITE may do to a tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    ReadOnly,
    /// The write is handed to the owner as a command and ACKed at once.
    Write,
    /// The write needs the `SubmitMission` scope and is ACKed by the owner
    /// later through [`TagServer::reply_ack`].
    Mission,
}

#[derive(Debug, Clone)]
struct Entry {
    value: TagValue,
    quality: Quality,
    tick: u64,
    access: Access,
}

#[derive(Debug, Default)]
struct Session {
    grant: Option<Grant>,
    filters: Vec<NameFilter>,
    last_tick: HashMap<String, u64>,
    outbox: VecDeque<Frame>,
    next_seq: u32,
    failures: u32,
    closed: bool,
    deferred: BTreeSet<u32>,
}

/// An accepted WRITE assignment for the owner to act on.
#[derive(Debug, Clone, PartialEq)]
pub struct WriteCommand {
    pub session: SessionId,
    pub req_seq: u32,
    pub key_id: String,
    pub name: String,
    pub value: TagValue,
    /// Mission writes: the owner must answer with `reply_ack`/`reply_err`.
    pub deferred: bool,
}

pub struct TagServer {
    tags: BTreeMap<String, Entry>,
    sessions: BTreeMap<SessionId, Session>,
    next_session: SessionId,
    auth: Arc<dyn Authenticator>,
    queue_limit: usize,
}

impl fmt::Debug for TagServer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TagServer")
            .field("tags", &self.tags.len())
            .field("sessions", &self.sessions.len())
            .finish()
    }
}

type Reject = (ErrorCode, Vec<(&'static str, String)>);

fn reject(code: ErrorCode) -> Reject {
    (code, Vec::new())
}

fn reject_with(code: ErrorCode, key: &'static str, value: impl Into<String>) -> Reject {
    (code, vec![(key, value.into())])
}

impl TagServer {
    pub fn new(auth: Arc<dyn Authenticator>) -> Self {
        Self {
            tags: BTreeMap::new(),
            sessions: BTreeMap::new(),
            next_session: 1,
            auth,
            queue_limit: DEFAULT_QUEUE_LIMIT,
        }
    }

    pub fn with_queue_limit(mut self, limit: usize) -> Self {
        self.queue_limit = limit.max(1);
        self
    }

    pub fn register(&mut self, name: &str, value: TagValue, access: Access) -> Result<(), ServerError> {
        if !crate::payload::is_valid_name(name) {
            return Err(ServerError::InvalidValue(name.to_string()));
        }
        if !value.is_valid() {
            return Err(ServerError::InvalidValue(name.to_string()));
        }
        if self.tags.contains_key(name) {
            return Err(ServerError::DuplicateTag(name.to_string()));
        }
        self.tags.insert(
            name.to_string(),
            Entry {
                value,
                quality: Quality::Good,
                tick: 0,
                access,
            },
        );
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tags.keys().map(String::as_str)
    }

    pub fn sample(&self, name: &str) -> Option<TagSample> {
        self.tags.get(name).map(|e| TagSample {
            name: name.to_string(),
            value: e.value.clone(),
            quality: e.quality,
            tick: e.tick,
        })
    }

    pub fn value(&self, name: &str) -> Option<&TagValue> {
        self.tags.get(name).map(|e| &e.value)
    }

    pub fn access(&self, name: &str) -> Option<Access> {
        self.tags.get(name).map(|e| e.access)
    }

    pub fn open_session(&mut self) -> SessionId {
        let id = self.next_session;
        self.next_session += 1;
        self.sessions.insert(id, Session::default());
        id
    }

    pub fn close_session(&mut self, id: SessionId) {
        self.sessions.remove(&id);
    }

    pub fn is_open(&self, id: SessionId) -> bool {
        self.sessions.get(&id).is_some_and(|s| !s.closed)
    }

    pub fn session_ids(&self) -> Vec<SessionId> {
        self.sessions.keys().copied().collect()
    }

    pub fn grant(&self, id: SessionId) -> Option<&Grant> {
        self.sessions.get(&id).and_then(|s| s.grant.as_ref())
    }

    /// Frames waiting to go out on a session, oldest first.
    pub fn drain(&mut self, id: SessionId) -> Vec<Frame> {
        self.sessions
            .get_mut(&id)
            .map(|s| s.outbox.drain(..).collect())
            .unwrap_or_default()
    }

    pub fn queued(&self, id: SessionId) -> usize {
        self.sessions.get(&id).map_or(0, |s| s.outbox.len())
    }

    fn push(&mut self, id: SessionId, msg_type: MsgType, payload: String) {
        let limit = self.queue_limit;
        let Some(s) = self.sessions.get_mut(&id) else {
            return;
        };
        if s.closed {
            return;
        }
        let seq = s.next_seq;
        s.next_seq = s.next_seq.wrapping_add(1);
        if s.outbox.len() >= limit {
            s.outbox.clear();
            s.closed = true;
            s.deferred.clear();
            let err = err_payload(None, ErrorCode::Overflow, &[]);
            s.outbox.push_back(Frame::text(MsgType::Err, seq, err));
            return;
        }
        s.outbox.push_back(Frame::text(msg_type, seq, payload));
    }

    fn push_err(&mut self, id: SessionId, req: u32, (code, extra): Reject) {
        let extra: Vec<(&str, &str)> = extra.iter().map(|(k, v)| (*k, v.as_str())).collect();
        self.push(id, MsgType::Err, err_payload(Some(req), code, &extra));
    }

    fn push_ack(&mut self, id: SessionId, req: u32, mut body: Payload) {
        body.req = Some(req);
        self.push(id, MsgType::Ack, body.render());
    }

    /// Handles one request frame. Responses are queued on the session; any
    /// accepted writes are returned for the owner to apply.
    pub fn handle_request(&mut self, id: SessionId, frame: &Frame) -> Vec<WriteCommand> {
        if !self.is_open(id) {
            return Vec::new();
        }
        let req = frame.seq();
        if frame.msg_type() == MsgType::Auth {
            self.handle_auth(id, frame);
            return Vec::new();
        }
        let grant = match self.sessions[&id].grant.clone() {
            Some(g) => g,
            None => {
                self.push_err(id, req, reject(ErrorCode::Unauthenticated));
                return Vec::new();
            }
        };
        if let Err(f) = self.auth.check(&grant) {
            if let Some(s) = self.sessions.get_mut(&id) {
                s.grant = None;
            }
            self.push_err(id, req, reject(f.into()));
            return Vec::new();
        }
        let payload = match Payload::parse_bytes(frame.payload()) {
            Ok(p) => p,
            Err(e) => {
                self.push_err(id, req, reject_with(ErrorCode::BadPayload, "detail", e.to_string()));
                return Vec::new();
            }
        };
        let result = match frame.msg_type() {
            MsgType::Read => self.read(&grant, &payload).map(|body| (body, Vec::new())),
            MsgType::Subscribe => self.subscribe(id, &grant, &payload).map(|b| (b, Vec::new())),
            MsgType::Write => self.write(id, req, &grant, &payload),
            other => Err(reject_with(
                ErrorCode::BadPayload,
                "detail",
                format!("unexpected {other:?} request"),
            )),
        };
        match result {
            Ok((Some(body), cmds)) => {
                self.push_ack(id, req, body);
                cmds
            }
            Ok((None, cmds)) => {
                if let Some(s) = self.sessions.get_mut(&id) {
                    s.deferred.insert(req);
                }
                cmds
            }
            Err(r) => {
                self.push_err(id, req, r);
                Vec::new()
            }
        }
    }

    fn handle_auth(&mut self, id: SessionId, frame: &Frame) {
        let req = frame.seq();
        let creds = frame.payload_str().unwrap_or("").trim_end_matches('\n');
        match self.auth.authenticate(creds) {
            Ok(grant) => {
                let body = Payload {
                    body: vec![format!("scopes={}", grant.scopes)],
                    ..Payload::default()
                };
                let s = self.sessions.get_mut(&id).expect("open session");
                s.grant = Some(grant);
                s.failures = 0;
                self.push_ack(id, req, body);
            }
            Err(f) => {
                self.push_err(id, req, reject(f.into()));
                let s = self.sessions.get_mut(&id).expect("open session");
                s.grant = None;
                s.failures += 1;
                if s.failures >= MAX_AUTH_FAILURES {
                    s.closed = true;
                }
            }
        }
    }

    fn require(grant: &Grant, scope: Scope) -> Result<(), Reject> {
        if grant.scopes.contains(scope) {
            Ok(())
        } else {
            Err(reject_with(ErrorCode::Unauthenticated, "scope", scope.name()))
        }
    }

    fn filters(payload: &Payload) -> Result<Vec<NameFilter>, Reject> {
        if payload.body.is_empty() {
            return Err(reject_with(ErrorCode::BadPayload, "detail", "no names"));
        }
        payload
            .body
            .iter()
            .map(|l| {
                NameFilter::parse(l)
                    .ok_or_else(|| reject_with(ErrorCode::BadPayload, "detail", format!("bad filter {l}")))
            })
            .collect()
    }

    fn snapshot(&self, filters: &[NameFilter]) -> Payload {
        let mut p = Payload::default();
        for (name, e) in &self.tags {
            if filters.iter().any(|f| f.matches(name)) {
                if e.quality == Quality::Stale {
                    p.stale.push(name.clone());
                }
                p.body
                    .push(format_assignment(&TagAssignment::new(name.clone(), e.value.clone())));
                p.tick = p.tick.max(Some(e.tick));
            }
        }
        p
    }

    fn read(&self, grant: &Grant, payload: &Payload) -> Result<Option<Payload>, Reject> {
        Self::require(grant, Scope::ReadTags)?;
        let filters = Self::filters(payload)?;
        if let Some(f) = filters
            .iter()
            .find(|f| !self.tags.keys().any(|n| f.matches(n)))
        {
            return Err(reject_with(ErrorCode::UnknownTag, "tag", f.render()));
        }
        Ok(Some(self.snapshot(&filters)))
    }

    fn subscribe(&mut self, id: SessionId, grant: &Grant, payload: &Payload) -> Result<Option<Payload>, Reject> {
        Self::require(grant, Scope::Subscribe)?;
        let filters = Self::filters(payload)?;
        let snapshot = self.snapshot(&filters);
        let ticks: Vec<(String, u64)> = self
            .tags
            .iter()
            .filter(|(n, _)| filters.iter().any(|f| f.matches(n)))
            .map(|(n, e)| (n.clone(), e.tick))
            .collect();
        let s = self.sessions.get_mut(&id).expect("open session");
        for f in filters {
            if !s.filters.contains(&f) {
                s.filters.push(f);
            }
        }
        for (n, t) in ticks {
            let last = s.last_tick.entry(n).or_insert(t);
            *last = (*last).max(t);
        }
        Ok(Some(snapshot))
    }

    fn write(
        &mut self,
        id: SessionId,
        req: u32,
        grant: &Grant,
        payload: &Payload,
    ) -> Result<(Option<Payload>, Vec<WriteCommand>), Reject> {
        Self::require(grant, Scope::WriteTags)?;
        let assignments = payload
            .assignments()
            .map_err(|e| reject_with(ErrorCode::BadPayload, "detail", e.to_string()))?;
        if assignments.is_empty() {
            return Err(reject_with(ErrorCode::BadPayload, "detail", "no assignments"));
        }
        let mut mission = false;
        for a in &assignments {
            let e = self
                .tags
                .get(&a.name)
                .ok_or_else(|| reject_with(ErrorCode::UnknownTag, "tag", a.name.clone()))?;
            match e.access {
                Access::ReadOnly => return Err(reject_with(ErrorCode::ReadOnly, "tag", a.name.clone())),
                Access::Mission => {
                    Self::require(grant, Scope::SubmitMission)?;
                    mission = true;
                }
                Access::Write => {}
            }
            if e.value.tag_type() != a.value.tag_type() {
                return Err(reject_with(ErrorCode::BadPayload, "tag", a.name.clone()));
            }
        }
        if mission && assignments.len() != 1 {
            return Err(reject_with(ErrorCode::BadPayload, "detail", "mission write must be alone"));
        }
        let cmds = assignments
            .into_iter()
            .map(|a| WriteCommand {
                session: id,
                req_seq: req,
                key_id: grant.key_id.clone(),
                name: a.name,
                value: a.value,
                deferred: mission,
            })
            .collect::<Vec<_>>();
        if mission {
            Ok((None, cmds))
        } else {
            let body = Payload {
                body: vec![format!("applied={}", cmds.len())],
                ..Payload::default()
            };
            Ok((Some(body), cmds))
        }
    }

    /// Completes a deferred mission write. Returns false if the request is
    /// not pending (already answered, or the session went away).
    pub fn reply_ack(&mut self, id: SessionId, req: u32, body: Vec<String>) -> bool {
        if !self.take_deferred(id, req) {
            return false;
        }
        self.push_ack(
            id,
            req,
            Payload {
                body,
                ..Payload::default()
            },
        );
        true
    }

    pub fn reply_err(&mut self, id: SessionId, req: u32, code: ErrorCode, detail: Option<&str>) -> bool {
        if !self.take_deferred(id, req) {
            return false;
        }
        let r = match detail {
            Some(d) => reject_with(code, "detail", d),
            None => reject(code),
        };
        self.push_err(id, req, r);
        true
    }

    fn take_deferred(&mut self, id: SessionId, req: u32) -> bool {
        self.sessions
            .get_mut(&id)
            .is_some_and(|s| !s.closed && s.deferred.remove(&req))
    }

    /// Applies tag changes to the mirror and queues PUBLISH frames: one per
    /// session per tick, assignments sorted by name. A session never sees a
    /// tag at a tick not newer than the last one it was sent. Returns the
    /// number of frames queued.
    pub fn publish_changes(&mut self, changes: &[TagSample]) -> Result<usize, ServerError> {
        for c in changes {
            let e = self
                .tags
                .get(&c.name)
                .ok_or_else(|| ServerError::UnknownTag(c.name.clone()))?;
            if e.value.tag_type() != c.value.tag_type() {
                return Err(ServerError::TypeMismatch(c.name.clone()));
            }
            if !c.value.is_valid() {
                return Err(ServerError::InvalidValue(c.name.clone()));
            }
        }
        // tick -> name -> sample; later duplicates win.
        let mut by_tick: BTreeMap<u64, BTreeMap<&str, &TagSample>> = BTreeMap::new();
        for c in changes {
            by_tick.entry(c.tick).or_default().insert(&c.name, c);
            let e = self.tags.get_mut(&c.name).expect("checked above");
            if c.tick >= e.tick {
                e.value = c.value.clone();
                e.quality = c.quality;
                e.tick = c.tick;
            }
        }
        let mut queued = 0;
        for id in self.session_ids() {
            for (tick, samples) in &by_tick {
                let Some(s) = self.sessions.get_mut(&id) else {
                    break;
                };
                if s.closed || s.grant.is_none() {
                    break;
                }
                let mut p = Payload {
                    tick: Some(*tick),
                    ..Payload::default()
                };
                for (name, sample) in samples {
                    if !s.filters.iter().any(|f| f.matches(name)) {
                        continue;
                    }
                    if s.last_tick.get(*name).is_some_and(|t| *t >= *tick) {
                        continue;
                    }
                    s.last_tick.insert((*name).to_string(), *tick);
                    if sample.quality == Quality::Stale {
                        p.stale.push((*name).to_string());
                    }
                    p.body.push(format_assignment(&TagAssignment::new(
                        *name,
                        sample.value.clone(),
                    )));
                }
                if !p.body.is_empty() {
                    self.push(id, MsgType::Publish, p.render());
                    queued += 1;
                }
            }
        }
        Ok(queued)
    }
}
