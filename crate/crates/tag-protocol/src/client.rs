//! Blocking client for the tag server, used by the CLI and tests.

use std::collections::VecDeque;
use std::io;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use thiserror::Error;

use crate::auth::Scopes;
use crate::frame::{Frame, MsgType};
use crate::payload::{serialize_assignments, Payload, PayloadError, TagAssignment};
use crate::server::ErrorCode;
use crate::transport::{read_frame, write_frame, TransportError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("server closed the connection")]
    Closed,
    #[error("server error {code}")]
    Remote { code: String, payload: Payload },
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl From<io::Error> for ClientError {
    fn from(e: io::Error) -> Self {
        ClientError::Transport(e.into())
    }
}

impl From<PayloadError> for ClientError {
    fn from(e: PayloadError) -> Self {
        ClientError::Protocol(e.to_string())
    }
}

impl ClientError {
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            ClientError::Remote { code, .. } => ErrorCode::parse(code),
            _ => None,
        }
    }
}

/// Response to a READ or SUBSCRIBE: assignments plus stale tag names.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub assignments: Vec<TagAssignment>,
    pub stale: Vec<String>,
}

pub struct TagClient {
    stream: TcpStream,
    next_seq: u32,
    publishes: VecDeque<Payload>,
}

impl TagClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            next_seq: 1,
            publishes: VecDeque::new(),
        })
    }

    pub fn set_timeout(&self, timeout: Option<Duration>) -> io::Result<()> {
        self.stream.set_read_timeout(timeout)
    }

    /// Sends one request and waits for the ACK or ERR that echoes its seq.
    /// PUBLISH frames arriving meanwhile are buffered.
    pub fn request(&mut self, msg_type: MsgType, payload: &str) -> Result<Payload, ClientError> {
        let seq = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        write_frame(&mut self.stream, &Frame::text(msg_type, seq, payload))?;
        loop {
            let frame = read_frame(&mut self.stream)?.ok_or(ClientError::Closed)?;
            let p = Payload::parse_bytes(frame.payload())?;
            match frame.msg_type() {
                MsgType::Publish => self.publishes.push_back(p),
                MsgType::Ack if p.req == Some(seq) => return Ok(p),
                MsgType::Err if p.req == Some(seq) || p.req.is_none() => {
                    let code = p.field("code").unwrap_or("").to_string();
                    return Err(ClientError::Remote { code, payload: p });
                }
                other => {
                    return Err(ClientError::Protocol(format!(
                        "unexpected {other:?} for request {seq}"
                    )))
                }
            }
        }
    }

    pub fn auth(&mut self, credentials: &str) -> Result<Scopes, ClientError> {
        let p = self.request(MsgType::Auth, credentials)?;
        p.field("scopes")
            .and_then(Scopes::parse)
            .ok_or_else(|| ClientError::Protocol("ACK without scopes".into()))
    }

    pub fn read(&mut self, filters: &[&str]) -> Result<Snapshot, ClientError> {
        let p = self.request(MsgType::Read, &filters.join("\n"))?;
        Ok(Snapshot {
            assignments: p.assignments()?,
            stale: p.stale,
        })
    }

    /// Returns the ACK body fields, e.g. `applied=1` or a mission id.
    pub fn write(&mut self, assignments: &[TagAssignment]) -> Result<Payload, ClientError> {
        self.request(MsgType::Write, &serialize_assignments(assignments))
    }

    pub fn subscribe(&mut self, filters: &[&str]) -> Result<Snapshot, ClientError> {
        let p = self.request(MsgType::Subscribe, &filters.join("\n"))?;
        Ok(Snapshot {
            assignments: p.assignments()?,
            stale: p.stale,
        })
    }

    /// Next PUBLISH payload, waiting on the socket if none is buffered.
    /// Returns `Ok(None)` when the read timeout elapses.
    pub fn next_publish(&mut self) -> Result<Option<Payload>, ClientError> {
        if let Some(p) = self.publishes.pop_front() {
            return Ok(Some(p));
        }
        match read_frame(&mut self.stream) {
            Ok(Some(f)) => {
                let p = Payload::parse_bytes(f.payload())?;
                match f.msg_type() {
                    MsgType::Publish => Ok(Some(p)),
                    MsgType::Err => Err(ClientError::Remote {
                        code: p.field("code").unwrap_or("").to_string(),
                        payload: p,
                    }),
                    other => Err(ClientError::Protocol(format!("unsolicited {other:?}"))),
                }
            }
            Ok(None) => Err(ClientError::Closed),
            Err(TransportError::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) =>
            {
                Ok(None)
            }
            Err(e) => Err(e.into()),
        }
    }
}
