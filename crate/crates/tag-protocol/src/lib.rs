//! Tag-server wire protocol: length-prefixed CRC-checked frames carrying
//! line-oriented tag payloads, plus a sans-IO server and a blocking client.

pub mod auth;
pub mod client;
pub mod frame;
pub mod payload;
pub mod server;
pub mod transport;
pub mod value;

pub use auth::{AllowAll, AuthFailure, Authenticator, Grant, Scope, Scopes, SingleKey};
pub use client::{ClientError, Snapshot, TagClient};
pub use frame::{decode, decode_exact, DecodeError, Frame, MsgType, MAX_PAYLOAD};
pub use payload::{NameFilter, Payload, PayloadError, TagAssignment};
pub use server::{Access, ErrorCode, ServerError, SessionId, TagServer, WriteCommand};
pub use transport::{read_frame, write_frame, TransportError};
pub use value::{Quality, TagSample, TagType, TagValue};
