//! Gateway configuration file: `key = value` lines, `#` comments.
//!
//! ```text
//! listen = 0.0.0.0:47809
//! device = 127.0.0.1:47808
//! device_key = gateway:secret
//! allow = 10.0.0.0/24
//! key = hmi 3f2a...e1 ReadTags,Subscribe
//! key = old 9c0d...77 ReadTags revoked
//! bridge = DT/ST1.STOP ST1.STOP both
//! bridge = DT/SYS.MISSION_REQ SYS.MISSION_REQ write mission
//! ```
//!
//! Without any `bridge` line every device tag is mirrored as `DT/<tag>`.

use std::fmt::Write as _;

use tag_protocol::Scopes;
use thiserror::Error;

use crate::bridge::{BridgeDirection, BridgeEntry, BridgeMap};
use crate::keys::KeyStore;
use crate::whitelist::Whitelist;

pub const DEFAULT_LISTEN: &str = "0.0.0.0:47809";
pub const DEFAULT_DEVICE: &str = "127.0.0.1:47808";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayConfig {
    pub listen: String,
    pub device: String,
    pub device_credentials: String,
    pub whitelist: Whitelist,
    pub keys: KeyStore,
    pub bridge: Option<BridgeMap>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            listen: DEFAULT_LISTEN.into(),
            device: DEFAULT_DEVICE.into(),
            device_credentials: String::new(),
            whitelist: Whitelist::default(),
            keys: KeyStore::default(),
            bridge: None,
        }
    }
}

impl GatewayConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = GatewayConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| ConfigError { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err("expected key = value".into()))?;
            let words: Vec<&str> = value.split_whitespace().collect();
            match key {
                "listen" => cfg.listen = value.to_string(),
                "device" => cfg.device = value.to_string(),
                "device_key" => cfg.device_credentials = value.to_string(),
                "allow" => cfg.whitelist.allow(value).map_err(err)?,
                "key" => {
                    let (id, hash, scopes, revoked) = match words.as_slice() {
                        [id, hash, scopes] => (id, hash, scopes, false),
                        [id, hash, scopes, "revoked"] => (id, hash, scopes, true),
                        _ => return Err(err("expected: key = <id> <sha256 hex> <scopes> [revoked]".into())),
                    };
                    let mut digest = [0u8; 32];
                    hex::decode_to_slice(hash, &mut digest).map_err(|_| err("bad key hash".into()))?;
                    let scopes = Scopes::parse(scopes).ok_or_else(|| err(format!("bad scopes `{scopes}`")))?;
                    if cfg.keys.get(id).is_some() {
                        return Err(err(format!("key `{id}` defined twice")));
                    }
                    cfg.keys.insert_hash(id, digest, scopes, revoked);
                }
                "bridge" => {
                    let (north, south, dir, mission) = match words.as_slice() {
                        [n, s, d] => (n, s, d, false),
                        [n, s, d, "mission"] => (n, s, d, true),
                        _ => return Err(err("expected: bridge = <north> <south> read|write|both [mission]".into())),
                    };
                    let direction = BridgeDirection::parse(dir).ok_or_else(|| err(format!("bad direction `{dir}`")))?;
                    cfg.bridge
                        .get_or_insert_with(BridgeMap::default)
                        .insert(
                            north,
                            BridgeEntry {
                                south: south.to_string(),
                                direction,
                                mission,
                            },
                        )
                        .map_err(err)?;
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "listen = {}", self.listen);
        let _ = writeln!(out, "device = {}", self.device);
        if !self.device_credentials.is_empty() {
            let _ = writeln!(out, "device_key = {}", self.device_credentials);
        }
        for net in self.whitelist.entries() {
            let _ = writeln!(out, "allow = {net}");
        }
        for (id, k) in self.keys.iter() {
            let _ = write!(out, "key = {id} {} {}", hex::encode(k.hash), k.scopes);
            if k.revoked {
                out.push_str(" revoked");
            }
            out.push('\n');
        }
        if let Some(b) = &self.bridge {
            for (north, e) in b.iter() {
                let _ = writeln!(out, "bridge = {north} {e}");
            }
        }
        out
    }
}
