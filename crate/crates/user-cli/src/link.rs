//! Fault injection lives here, between modules, so the modules themselves
//! run the same code in-process and over sockets.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LinkId {
    DeviceGateway,
    GatewayCore,
}

/// `Up` flows toward the twin, `Down` toward the device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LinkDir {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultKind {
    FixedDelay(u64),
    Drop(f64),
    /// Link down for this many ticks; both ends reconnect afterwards.
    Sever(u64),
    Clear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec {
    pub link: LinkId,
    pub dirs: Vec<LinkDir>,
    pub kind: FaultKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Channel {
    pub delay_ms: u64,
    pub drop: f64,
    /// Down until this time, exclusive.
    pub severed_until: Option<u64>,
}

impl Channel {
    pub fn is_severed(&self, now: u64) -> bool {
        self.severed_until.is_some_and(|u| now < u)
    }

    /// When a frame sent now arrives, or `None` if it is lost.
    pub fn send(&self, now: u64, rng: &mut ChaCha8Rng) -> Option<u64> {
        if self.is_severed(now) {
            return None;
        }
        if self.drop > 0.0 && rng.random_bool(self.drop) {
            return None;
        }
        Some(now + self.delay_ms)
    }
}

/// Both links, both directions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Links {
    channels: [[Channel; 2]; 2],
}

fn idx(link: LinkId, dir: LinkDir) -> (usize, usize) {
    (link as usize, dir as usize)
}

impl Links {
    pub fn channel(&self, link: LinkId, dir: LinkDir) -> &Channel {
        let (a, b) = idx(link, dir);
        &self.channels[a][b]
    }

    fn channel_mut(&mut self, link: LinkId, dir: LinkDir) -> &mut Channel {
        let (a, b) = idx(link, dir);
        &mut self.channels[a][b]
    }

    pub fn set_delay(&mut self, link: LinkId, dir: LinkDir, ms: u64) {
        self.channel_mut(link, dir).delay_ms = ms;
    }

    /// Applies a fault at `now`. Returns the end of a sever, if any.
    pub fn apply(&mut self, f: &FaultSpec, now: u64, tick_ms: u64) -> Option<u64> {
        let mut until = None;
        for d in &f.dirs {
            let c = self.channel_mut(f.link, *d);
            match f.kind {
                FaultKind::FixedDelay(ms) => c.delay_ms = ms,
                FaultKind::Drop(p) => c.drop = p,
                FaultKind::Sever(ticks) => {
                    let end = now + ticks * tick_ms;
                    c.severed_until = Some(end);
                    until = Some(end);
                }
                FaultKind::Clear => *c = Channel::default(),
            }
        }
        until
    }
}
