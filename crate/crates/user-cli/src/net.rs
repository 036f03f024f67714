//! Sockets around the sans-IO modules, for running them as separate
//! processes. Every link carries the binary frame protocol over TCP.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use dt_core::api::{channels, router, run_core};
use dt_core::Core;
use gateway::{Gateway, Output};
use plc_control::DeviceNode;
use tag_protocol::{decode, DecodeError, Frame, MsgType, Payload, SessionId};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;

pub const DEVICE_PORT: u16 = 47808;
pub const GATEWAY_PORT: u16 = 47809;
pub const API_PORT: u16 = 8080;

/// Forwards decoded frames until end of stream or a framing error.
async fn read_frames(mut r: OwnedReadHalf, tx: mpsc::Sender<Frame>, mut inspect: impl FnMut(&Frame)) {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 8192];
    loop {
        loop {
            match decode(&buf) {
                Ok((f, used)) => {
                    buf.drain(..used);
                    inspect(&f);
                    if tx.send(f).await.is_err() {
                        return;
                    }
                }
                Err(DecodeError::Truncated { .. }) => break,
                Err(_) => return,
            }
        }
        match r.read(&mut chunk).await {
            Ok(0) | Err(_) => return,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
        }
    }
}

async fn write_frames(mut w: OwnedWriteHalf, mut rx: mpsc::UnboundedReceiver<Frame>) {
    while let Some(f) = rx.recv().await {
        if w.write_all(&f.encode()).await.is_err() {
            return;
        }
    }
    let _ = w.shutdown().await;
}

type Sessions = Arc<Mutex<HashMap<SessionId, mpsc::UnboundedSender<Frame>>>>;

fn flush(node: &mut DeviceNode, sessions: &Sessions, id: SessionId) {
    let frames = node.drain(id);
    if let Some(tx) = sessions.lock().expect("sessions lock").get(&id) {
        for f in frames {
            let _ = tx.send(f);
        }
    }
}

/// Serves the device tag server and steps the line in real time.
pub async fn serve_device(node: Arc<Mutex<DeviceNode>>, listener: TcpListener) -> anyhow::Result<()> {
    let sessions: Sessions = Arc::default();
    let tick_ms = u64::from(node.lock().expect("node lock").factory().config().tick_duration);
    {
        let node = node.clone();
        let sessions = sessions.clone();
        tokio::spawn(async move {
            let mut every = tokio::time::interval(Duration::from_millis(tick_ms));
            every.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Burst);
            every.tick().await;
            loop {
                every.tick().await;
                let mut n = node.lock().expect("node lock");
                let report = n.step();
                for (id, st) in &report.output.transitions {
                    eprintln!("tick {} mission {id} {st}", report.tick);
                }
                let ids: Vec<SessionId> = sessions.lock().expect("sessions lock").keys().copied().collect();
                for id in ids {
                    flush(&mut n, &sessions, id);
                }
            }
        });
    }
    loop {
        let (sock, peer) = listener.accept().await?;
        let (r, w) = sock.into_split();
        let (out_tx, out_rx) = mpsc::unbounded_channel();
        let id = node.lock().expect("node lock").open_session();
        sessions.lock().expect("sessions lock").insert(id, out_tx);
        eprintln!("device: session {id} from {peer}");
        tokio::spawn(write_frames(w, out_rx));
        let (in_tx, mut in_rx) = mpsc::channel(256);
        tokio::spawn(read_frames(r, in_tx, |_| {}));
        let node = node.clone();
        let sessions = sessions.clone();
        tokio::spawn(async move {
            while let Some(f) = in_rx.recv().await {
                let mut n = node.lock().expect("node lock");
                n.handle_frame(id, &f);
                flush(&mut n, &sessions, id);
            }
            node.lock().expect("node lock").close_session(id);
            sessions.lock().expect("sessions lock").remove(&id);
            eprintln!("device: session {id} closed");
        });
    }
}

/// Accepts twin connections and bridges each to its own device session.
pub async fn serve_gateway(gw: Arc<Mutex<Gateway>>, listener: TcpListener, device: String) -> anyhow::Result<()> {
    loop {
        let (sock, peer) = listener.accept().await?;
        let Some((id, first)) = gw.lock().expect("gateway lock").connect(peer.ip()) else {
            eprintln!("gateway: refused {peer}");
            continue;
        };
        let south = match TcpStream::connect(&device).await {
            Ok(s) => s,
            Err(e) => {
                eprintln!("gateway: device {device} unreachable: {e}");
                gw.lock().expect("gateway lock").disconnect(id);
                continue;
            }
        };
        eprintln!("gateway: session {id} from {peer}");
        tokio::spawn(bridge_session(gw.clone(), id, sock, south, first));
    }
}

async fn bridge_session(gw: Arc<Mutex<Gateway>>, id: u64, north: TcpStream, south: TcpStream, first: Vec<Output>) {
    let (nr, nw) = north.into_split();
    let (sr, sw) = south.into_split();
    let (north_tx, north_rx) = mpsc::unbounded_channel();
    let (south_tx, south_rx) = mpsc::unbounded_channel();
    tokio::spawn(write_frames(nw, north_rx));
    tokio::spawn(write_frames(sw, south_rx));
    let (from_north, mut north_in) = mpsc::channel(256);
    let (from_south, mut south_in) = mpsc::channel(256);
    tokio::spawn(read_frames(nr, from_north, |_| {}));
    tokio::spawn(read_frames(sr, from_south, |_| {}));

    let route = |outs: Vec<Output>| -> bool {
        let mut open = true;
        for o in outs {
            match o {
                Output::North(i, f) if i == id => drop(north_tx.send(f)),
                Output::South(i, f) if i == id => drop(south_tx.send(f)),
                Output::Close(i) if i == id => open = false,
                _ => {}
            }
        }
        open
    };
    let mut open = route(first);
    while open {
        let outs = tokio::select! {
            f = north_in.recv() => match f {
                Some(f) => gw.lock().expect("gateway lock").on_north(id, &f),
                None => break,
            },
            f = south_in.recv() => match f {
                Some(f) => gw.lock().expect("gateway lock").on_south(id, &f),
                None => break,
            },
        };
        open = route(outs);
    }
    let _ = gw.lock().expect("gateway lock").disconnect(id);
    eprintln!("gateway: session {id} closed");
}

/// Twin time on the device's time base: local elapsed time, pushed forward
/// whenever a publish shows the device is further along.
#[derive(Debug)]
pub struct AlignedClock {
    start: Instant,
    offset: AtomicU64,
    tick_ms: u64,
}

impl AlignedClock {
    pub fn new(tick_ms: u64) -> Self {
        Self {
            start: Instant::now(),
            offset: AtomicU64::new(0),
            tick_ms,
        }
    }

    pub fn now(&self) -> u64 {
        self.start.elapsed().as_millis() as u64 + self.offset.load(Ordering::Relaxed)
    }

    pub fn observe(&self, f: &Frame) {
        if f.msg_type() != MsgType::Publish {
            return;
        }
        let Some(tick) = Payload::parse_bytes(f.payload()).ok().and_then(|p| p.tick) else {
            return;
        };
        let elapsed = self.start.elapsed().as_millis() as u64;
        self.offset
            .fetch_max((tick * self.tick_ms).saturating_sub(elapsed), Ordering::Relaxed);
    }
}

/// Runs the twin against a gateway, reconnecting whenever the link drops,
/// and serves the HTTP API on `api`.
pub async fn serve_twin(mut core: Core, gateway: String, api: TcpListener, tick_ms: u64) -> anyhow::Result<()> {
    let ch = channels();
    let app = router(ch.handle.clone());
    tokio::spawn(async move {
        if let Err(e) = axum::serve(api, app).await {
            eprintln!("twin: api stopped: {e}");
        }
    });
    let (mut calls, stream) = (ch.calls, ch.stream);
    let clock = Arc::new(AlignedClock::new(tick_ms));
    loop {
        let sock = match TcpStream::connect(&gateway).await {
            Ok(s) => s,
            Err(e) => {
                eprintln!("twin: gateway {gateway} unreachable: {e}");
                tokio::time::sleep(Duration::from_secs(1)).await;
                continue;
            }
        };
        eprintln!("twin: connected to {gateway}");
        let (r, w) = sock.into_split();
        let (in_tx, in_rx) = mpsc::channel(1024);
        let (out_tx, mut out_rx) = mpsc::channel::<Frame>(1024);
        let (wire_tx, wire_rx) = mpsc::unbounded_channel();
        tokio::spawn(async move {
            while let Some(f) = out_rx.recv().await {
                if wire_tx.send(f).is_err() {
                    return;
                }
            }
        });
        tokio::spawn(write_frames(w, wire_rx));
        let c = clock.clone();
        tokio::spawn(read_frames(r, in_tx, move |f| c.observe(f)));
        let c = clock.clone();
        core = run_core(core, move || c.now(), in_rx, out_tx, &mut calls, &stream).await;
        eprintln!("twin: gateway link closed, reconnecting");
        tokio::time::sleep(Duration::from_secs(1)).await;
    }
}

pub fn local(port: u16) -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], port))
}
