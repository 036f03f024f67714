//! Gateway between the twin (north) and the device tag server (south).
//!
//! North clients authenticate with application keys whose secrets are kept
//! only as SHA-256 digests. Connections are filtered by source address
//! before anything is parsed. Tags are exposed north under `DT/` names
//! through an explicit [`BridgeMap`], each entry readable, writable or both.
//! The bridge itself ([`Gateway`]) is sans-IO: feed it frames, get back
//! frames to send.

pub mod bridge;
pub mod config;
pub mod keys;
pub mod session;
pub mod whitelist;

pub use bridge::{BridgeDirection, BridgeEntry, BridgeMap, NORTH_PREFIX};
pub use config::{ConfigError, GatewayConfig, DEFAULT_DEVICE, DEFAULT_LISTEN};
pub use keys::{KeyStore, SharedKeys, StoredKey};
pub use session::{Gateway, GatewayStats, NorthId, Output, SessionCounters};
pub use whitelist::Whitelist;
