//! Acceptance suite. Prints one line per criterion and exits non-zero if
//! any fails. Tolerances are the constants below.

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use gateway::{BridgeMap, Gateway, KeyStore, Output, SharedKeys, Whitelist};
use ome_factory::{points, FactoryConfig};
use plc_control::{DeviceNode, MissionKind, Origin};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tag_protocol::{decode, decode_exact, DecodeError, Frame, MsgType, Scope, Scopes, SingleKey, MAX_PAYLOAD};
use user_cli::link::{LinkDir, LinkId};
use user_cli::{bundled, replay, run_scenario, RunOptions, Scenario, Stack, StackConfig, Verdict, BUNDLED};

/// Criterion 1: wall-clock budget per in-process run.
const RUN_BUDGET: Duration = Duration::from_secs(5);
/// Criterion 2: one-way twin-to-PLC delay and the accepted round trip.
const TWIN_TO_PLC_DELAY_MS: u64 = 1000;
const RTT_MIN_MS: u64 = 1000;
const RTT_MAX_MS: u64 = 1300;
const RTT_TRIALS: usize = 100;
/// Criteria 3 and 6.
const RANDOM_SCHEDULES: u64 = 1000;
const SCHEDULE_TICKS: u64 = 320;
/// Criterion 5.
const LATENCIES_MS: [u64; 4] = [0, 250, 500, 1000];
/// Criterion 7.
const CODEC_FRAMES: usize = 100_000;
/// Criterion 10.
const KPI_WINDOWS: usize = 200;

type Outcome = Result<String, String>;

fn check(ok: bool, pass: String, fail: impl FnOnce() -> String) -> Outcome {
    if ok {
        Ok(pass)
    } else {
        Err(fail())
    }
}

fn scenarios() -> Vec<Scenario> {
    BUNDLED.iter().map(|(n, _)| bundled(n).unwrap()).collect()
}

/// `(tick, rest)` of a trace record.
fn split(line: &str) -> Option<(u64, &str)> {
    let (t, rest) = line.split_once(' ')?;
    Some((t.parse().ok()?, rest))
}

fn kv<'a>(rest: &'a str, key: &str) -> Option<&'a str> {
    rest.split_whitespace().find_map(|w| w.strip_prefix(key)?.strip_prefix('='))
}

fn c1_three_origins() -> Outcome {
    let base = bundled("pass_docking").unwrap();
    let mut ome_traces = Vec::new();
    let mut notes = Vec::new();
    for origin in Origin::ALL {
        let s = base.with_origin(origin);
        let o = run_scenario(&s, &RunOptions::default()).map_err(|e| e.to_string())?;
        let state = o.missions[0]["state"].as_str().unwrap_or("").to_string();
        if state != "Completed" {
            return Err(format!("{} origin ended {state}", origin.name()));
        }
        let stop = o.stack.point_history(&points::stop(1));
        if stop != ["1", "0", "1"] {
            return Err(format!("{} origin: ST1.STOP went {}", origin.name(), stop.join(" ")));
        }
        if o.wall >= RUN_BUDGET {
            return Err(format!("{} origin took {:?}", origin.name(), o.wall));
        }
        let ome: Vec<String> = o
            .trace
            .iter()
            .filter_map(|l| split(l))
            .filter(|(_, r)| r.starts_with("ome "))
            .map(|(_, r)| r.to_string())
            .collect();
        ome_traces.push(ome);
        notes.push(format!("{} {} ms", origin.name(), o.wall.as_millis()));
    }
    check(
        ome_traces.windows(2).all(|w| w[0] == w[1]),
        format!("Completed from all origins, equal OME traces, STOP 1-0-1 ({})", notes.join(", ")),
        || "OME event traces differ between origins".into(),
    )
}

fn c2_one_second() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rtts = Vec::new();
    for _ in 0..RTT_TRIALS {
        let mut stack = Stack::new(StackConfig::new(FactoryConfig::default(), 2)).map_err(|e| e.to_string())?;
        // Split the delay over both hops toward the device.
        let first = rng.random_range(0..=TWIN_TO_PLC_DELAY_MS);
        stack.links_mut().set_delay(LinkId::GatewayCore, LinkDir::Down, first);
        stack.links_mut().set_delay(LinkId::DeviceGateway, LinkDir::Down, TWIN_TO_PLC_DELAY_MS - first);
        // P-002 docks at stop 3 at tick 67 and stays there until released.
        let at = rng.random_range(3_400..5_000);
        stack.advance_to(at);
        let user_cli::Handle::Core(id) = stack.submit(MissionKind::PassDockingStation(3), Origin::Twin) else {
            unreachable!()
        };
        stack.advance_to(at + 3 * TWIN_TO_PLC_DELAY_MS);
        let rec = stack.core().mission(id).ok_or("mission vanished")?;
        let requested = rec.entered(dt_core::MissionState::Requested).ok_or("no request stamp")?;
        let repl = stack
            .core()
            .replications()
            .iter()
            .find(|r| r.mission_id == id)
            .ok_or_else(|| format!("mission submitted at {at} ms never replicated ({:?})", rec.state))?;
        rtts.push(repl.ms - requested);
    }
    let (lo, hi) = (*rtts.iter().min().unwrap(), *rtts.iter().max().unwrap());
    let mean = rtts.iter().sum::<u64>() as f64 / rtts.len() as f64;
    check(
        lo >= RTT_MIN_MS && hi <= RTT_MAX_MS,
        format!("{RTT_TRIALS} trials, RTT min {lo} / mean {mean:.1} / max {hi} ms, bound [{RTT_MIN_MS}, {RTT_MAX_MS}]"),
        || format!("RTT range {lo}..{hi} ms outside [{RTT_MIN_MS}, {RTT_MAX_MS}]"),
    )
}

/// Replications that come before their mission's validation in a trace.
fn authority_violations(trace: &[String]) -> (usize, Vec<String>) {
    let mut validated: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    let mut seen = 0;
    let mut bad = Vec::new();
    for line in trace {
        let Some((_, rest)) = split(line) else { continue };
        if let Some(m) = rest.strip_prefix("twin mission ") {
            let mut w = m.split_whitespace();
            if let (Some(id), Some("Validated")) = (w.next(), w.next()) {
                let seq = kv(m, "seq").and_then(|v| v.parse().ok()).unwrap_or(0);
                let ms = kv(m, "ms").and_then(|v| v.parse().ok()).unwrap_or(0);
                validated.insert(id, (seq, ms));
            }
        } else if let Some(r) = rest.strip_prefix("twin replicate ") {
            seen += 1;
            let id = kv(r, "mission").unwrap_or("?");
            let seq: u64 = kv(r, "seq").and_then(|v| v.parse().ok()).unwrap_or(0);
            let ms: u64 = kv(r, "ms").and_then(|v| v.parse().ok()).unwrap_or(0);
            match validated.get(id) {
                Some(&(vs, vms)) if vs < seq && vms <= ms => {}
                _ => bad.push(line.clone()),
            }
        }
    }
    (seen, bad)
}

/// Remote actuations at a station whose mat was engaged for that scan,
/// judged from the mat changes the harness itself made.
fn interlock_breaches(trace: &[String]) -> (usize, Vec<String>) {
    let mut mat: BTreeMap<usize, bool> = BTreeMap::new();
    let mut remote = 0;
    let mut bad = Vec::new();
    for line in trace {
        let Some((_, rest)) = split(line) else { continue };
        let w: Vec<&str> = rest.split_whitespace().collect();
        match w.as_slice() {
            ["mat", k, v] => {
                mat.insert(k.parse().unwrap_or(0), *v == "1");
            }
            ["act", point, _, "remote=1"] => {
                remote += 1;
                let k = points::Point::parse(point).and_then(|p| p.station());
                if k.is_some_and(|k| mat.get(&k).copied().unwrap_or(false)) {
                    bad.push(line.clone());
                }
            }
            _ => {}
        }
    }
    (remote, bad)
}

fn random_schedule(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = vec![
        format!("name random-{seed}"),
        format!("config pallet_count {}", rng.random_range(3..=5)),
    ];
    let mut at: Vec<(u64, String)> = Vec::new();
    for (link, dir) in [("gc", "up"), ("gc", "down"), ("dg", "up"), ("dg", "down")] {
        if rng.random_bool(0.3) {
            let ms = [50, 100, 250, 500][rng.random_range(0..4)];
            at.push((0, format!("fault {link} {dir} delay {ms}")));
        }
    }
    for _ in 0..rng.random_range(4..14) {
        let t = rng.random_range(0..SCHEDULE_TICKS - 20);
        let k = rng.random_range(1..=6);
        let origin = ["hmi", "platform", "twin"][rng.random_range(0..3)];
        at.push((t, format!("mission pass {k} origin {origin}")));
    }
    for _ in 0..rng.random_range(0..4) {
        let t = rng.random_range(0..SCHEDULE_TICKS - 20);
        let k = rng.random_range(1..=6);
        let dir = if rng.random_bool(0.5) { "up" } else { "down" };
        at.push((t, format!("mission elevator {k} {dir} origin twin")));
    }
    for _ in 0..rng.random_range(2..12) {
        let t = rng.random_range(0..SCHEDULE_TICKS - 20);
        let k = rng.random_range(1..=6);
        at.push((t, format!("interlock {k} {}", if rng.random_bool(0.5) { "on" } else { "off" })));
    }
    at.sort_by_key(|(t, _)| *t);
    lines.extend(at.into_iter().map(|(t, a)| format!("at {t} {a}")));
    lines.push(format!("run {SCHEDULE_TICKS}"));
    lines.join("\n").parse().expect("generated schedules parse")
}

struct RandomRuns {
    replications: usize,
    authority: Vec<String>,
    remote: usize,
    interlock_rejections: usize,
    breaches: Vec<String>,
    harness_breaches: usize,
}

fn random_runs() -> Result<RandomRuns, String> {
    let mut r = RandomRuns {
        replications: 0,
        authority: Vec::new(),
        remote: 0,
        interlock_rejections: 0,
        breaches: Vec::new(),
        harness_breaches: 0,
    };
    let runs = scenarios().into_iter().chain((0..RANDOM_SCHEDULES).map(random_schedule));
    for s in runs {
        let o = run_scenario(&s, &RunOptions::default()).map_err(|e| format!("{}: {e}", s.name))?;
        let (seen, bad) = authority_violations(&o.trace);
        r.replications += seen;
        r.authority.extend(bad.into_iter().map(|l| format!("{}: {l}", s.name)));
        let (remote, bad) = interlock_breaches(&o.trace);
        r.remote += remote;
        r.breaches.extend(bad.into_iter().map(|l| format!("{}: {l}", s.name)));
        r.harness_breaches += o.interlock_violations.len();
        r.interlock_rejections += o
            .missions
            .as_array()
            .into_iter()
            .flatten()
            .filter(|m| m["reason"] == "InterlockEngaged")
            .count();
    }
    Ok(r)
}

fn c3_authority(r: &RandomRuns) -> Outcome {
    check(
        r.authority.is_empty() && r.replications > 0,
        format!(
            "{} bundled + {RANDOM_SCHEDULES} random runs, {} replications, 0 before validation",
            BUNDLED.len(),
            r.replications
        ),
        || format!("{} premature replications, first: {:?}", r.authority.len(), r.authority.first()),
    )
}

fn c6_interlock(r: &RandomRuns) -> Outcome {
    check(
        r.breaches.is_empty() && r.harness_breaches == 0 && r.remote > 0 && r.interlock_rejections > 0,
        format!(
            "{RANDOM_SCHEDULES} random schedules, {} remote actuations, {} requests refused by a mat, 0 breaches",
            r.remote, r.interlock_rejections
        ),
        || {
            format!(
                "{} breaches ({} by PLC audit), first: {:?}",
                r.breaches.len(),
                r.harness_breaches,
                r.breaches.first()
            )
        },
    )
}

fn c4_mirror() -> Outcome {
    let mut compared = 0;
    for s in scenarios() {
        let o = run_scenario(&s, &RunOptions::default()).map_err(|e| e.to_string())?;
        if !o.mirror_mismatches.is_empty() {
            return Err(format!(
                "{}: {} mismatches, first: {}",
                s.name,
                o.mirror_mismatches.len(),
                o.mirror_mismatches[0]
            ));
        }
        compared += o.stack.core().model().things().map(|t| t.bindings.len()).sum::<usize>();
    }
    Ok(format!(
        "{} scenarios, {compared} bound properties compared, all bit-identical",
        BUNDLED.len()
    ))
}

/// Every RFID read is a checkpoint. One batch later the twin must hold the
/// pallet exactly where the device had it when the read was published, so
/// the only error left is what the line did during the link delay.
fn c5_divergence() -> Outcome {
    let base = bundled("full_line").unwrap();
    let cfg = FactoryConfig::default();
    let v = u64::from(cfg.conveyor_speed);
    let tick_ms = u64::from(cfg.tick_duration);
    let mut notes = Vec::new();
    for l in LATENCIES_MS {
        let bound = v * l / 1000 + v * tick_ms / 1000;
        let mut stack = Stack::new(StackConfig::new(base.factory_config(7).map_err(|e| e.to_string())?, 7))
            .map_err(|e| e.to_string())?;
        stack.links_mut().set_delay(LinkId::GatewayCore, LinkDir::Up, l);
        let layout = stack.device().factory().layout().clone();
        let fronts = |s: &Stack| -> BTreeMap<String, u64> {
            s.device()
                .factory()
                .pallets()
                .iter()
                .map(|p| (p.rfid().to_string(), p.front()))
                .collect()
        };
        let mut truth = vec![fronts(&stack)];
        let mut schedule = base.schedule.iter().peekable();
        let mut worst = 0;
        let mut samples = 0;
        // (rfid, source tick of the checkpoint batch)
        let mut pending: Vec<(String, u64)> = Vec::new();
        let mut checkpoints = 0;
        let settle_ticks = l.div_ceil(tick_ms);
        let mut traced = 0;
        for t in 1..=base.run_ticks {
            while let Some(e) = schedule.next_if(|e| e.tick <= t) {
                stack.advance_before_tick(e.tick);
                if let user_cli::Action::Mission { kind, origin } = e.action {
                    stack.submit(kind, origin);
                }
            }
            stack.advance_to(t * tick_ms);
            truth.push(fronts(&stack));
            for line in &stack.trace()[traced..] {
                let Some((tick, rest)) = split(line) else { continue };
                let w: Vec<&str> = rest.split_whitespace().collect();
                if let ["ome", p, rfid] = w.as_slice() {
                    if p.ends_with(".RFID") {
                        pending.push((rfid.to_string(), tick));
                    }
                }
            }
            traced = stack.trace().len();
            for (_, err) in stack.divergence() {
                if let Some(e) = err {
                    worst = worst.max(e);
                    samples += 1;
                }
            }
            let (due, later): (Vec<_>, Vec<_>) = pending.into_iter().partition(|(_, src)| src + settle_ticks <= t);
            pending = later;
            if due.is_empty() {
                continue;
            }
            let est: BTreeMap<String, Option<u64>> = stack
                .core_mut()
                .estimates(t * tick_ms)
                .into_iter()
                .map(|e| (e.rfid, e.position))
                .collect();
            for (rfid, src) in due {
                checkpoints += 1;
                let at_src = truth[src as usize][&rfid];
                let err = est
                    .get(&rfid)
                    .copied()
                    .flatten()
                    .map(|e| layout.ahead(e, at_src).min(layout.ahead(at_src, e)));
                if err != Some(0) {
                    return Err(format!(
                        "L={l}: {rfid} off by {err:?} mm at tick {t} against its checkpoint at tick {src}"
                    ));
                }
            }
        }
        if worst > bound {
            return Err(format!("L={l} ms: max error {worst} mm > bound {bound} mm"));
        }
        if samples == 0 || checkpoints == 0 {
            return Err(format!("L={l} ms: nothing measured"));
        }
        notes.push(format!("L={l}: max {worst} <= {bound} mm"));
    }
    Ok(format!("{}; exact at every checkpoint", notes.join(", ")))
}

fn random_frame(rng: &mut ChaCha8Rng) -> Frame {
    let t = MsgType::ALL[rng.random_range(0..MsgType::ALL.len())];
    let len = if rng.random_bool(0.001) {
        rng.random_range(0..=MAX_PAYLOAD)
    } else {
        rng.random_range(0..128)
    };
    let mut payload = vec![0u8; len];
    rng.fill_bytes(&mut payload);
    Frame::new(t, rng.random(), payload).expect("payload within limit")
}

fn c7_codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..CODEC_FRAMES {
        let f = random_frame(&mut rng);
        let bytes = f.encode();
        if decode(&bytes) != Ok((f.clone(), bytes.len())) || decode_exact(&bytes).as_ref() != Ok(&f) {
            return Err(format!("round trip failed on frame {i}"));
        }
    }
    let mut accepted = 0;
    for i in 0..CODEC_FRAMES {
        let mut buf = vec![0u8; rng.random_range(0..160)];
        rng.fill_bytes(&mut buf);
        if i % 2 == 0 && buf.len() >= 4 {
            buf[..4].copy_from_slice(&Frame::text(MsgType::Ack, 0, "").encode()[..4]);
        }
        let ok = std::panic::catch_unwind(|| (decode(&buf).is_ok(), decode_exact(&buf).is_ok()));
        match ok {
            Ok((a, b)) => accepted += usize::from(a || b),
            Err(_) => return Err(format!("decoder panicked on random input {i}")),
        }
    }
    let valid = Frame::text(MsgType::Publish, 77, "@tick=9\nST1.RFID=S:P-001\nST1.PALLET_A=B:1").encode();
    let mut corrupted = 0;
    for pos in 0..valid.len() {
        for delta in 1..=255u8 {
            let mut bad = valid.clone();
            bad[pos] ^= delta;
            corrupted += 1;
            match decode_exact(&bad) {
                Err(DecodeError::BadCrc | DecodeError::BadMagic) => {}
                other => return Err(format!("byte {pos} ^ {delta:#04x} decoded as {other:?}")),
            }
        }
    }
    check(
        accepted == 0,
        format!("{CODEC_FRAMES} round trips, {CODEC_FRAMES} random inputs, {corrupted} single-byte corruptions all rejected"),
        || format!("{accepted} random inputs decoded"),
    )
}

/// Gateway wired straight to a device, counting what crosses south.
struct SecurityRig {
    gw: Gateway,
    dev: DeviceNode,
    south: Option<tag_protocol::SessionId>,
    forwarded: usize,
}

impl SecurityRig {
    fn new(keys: KeyStore, wl: Whitelist) -> Self {
        let dev = DeviceNode::new(
            FactoryConfig::default(),
            Arc::new(SingleKey::new("gateway", "device-secret", Scopes::ALL)),
        )
        .unwrap();
        let bridge = BridgeMap::mirror(dev.server().names().map(|n| (n, dev.server().access(n).unwrap())));
        let gw = Gateway::new(SharedKeys::new(keys), wl, bridge, "gateway:device-secret");
        Self {
            gw,
            dev,
            south: None,
            forwarded: 0,
        }
    }

    fn route(&mut self, out: Vec<Output>) {
        let mut queue = out;
        while !queue.is_empty() {
            let mut next = Vec::new();
            for o in queue {
                if let Output::South(id, f) = o {
                    if f.msg_type() != MsgType::Auth {
                        self.forwarded += 1;
                    }
                    let sid = *self.south.get_or_insert_with(|| self.dev.open_session());
                    self.dev.handle_frame(sid, &f);
                    for r in self.dev.drain(sid) {
                        next.extend(self.gw.on_south(id, &r));
                    }
                }
            }
            queue = next;
        }
    }
}

fn c9_security() -> Outcome {
    let requests: [(MsgType, &str, &[Scope]); 5] = [
        (MsgType::Read, "DT/ST2.*", &[Scope::ReadTags]),
        (MsgType::Subscribe, "DT/ST2.STOP", &[Scope::Subscribe]),
        (MsgType::Write, "DT/ST2.STOP=B:0", &[Scope::WriteTags]),
        (MsgType::Write, "DT/SYS.OPERATOR_MAT_2=B:1", &[Scope::WriteTags]),
        (
            MsgType::Write,
            "DT/SYS.MISSION_REQ=S:PassDockingStation%3B2%3BPlatform",
            &[Scope::WriteTags, Scope::SubmitMission],
        ),
    ];
    let mut wl = Whitelist::default();
    wl.allow("10.20.0.0/16").unwrap();
    let mut denied_sent = 0;
    let mut leaked = 0;
    let mut allowed_ok = 0;
    let mut cases = 0;
    for bits in 0..16u8 {
        let scopes = Scopes::from_bits(bits);
        for addr in ["10.20.3.4", "10.21.3.4"] {
            // None: no AUTH; then a wrong secret, a revoked key, the right key.
            for auth in [None, Some("app:wrong"), Some("old:pw"), Some("app:pw")] {
                cases += 1;
                let mut keys = KeyStore::default();
                keys.insert_secret("app", "pw", scopes);
                keys.insert_secret("old", "pw", Scopes::ALL);
                keys.revoke("old");
                let mut rig = SecurityRig::new(keys, wl.clone());
                let ip: IpAddr = addr.parse().unwrap();
                let Some((id, out)) = rig.gw.connect(ip) else {
                    denied_sent += requests.len();
                    continue;
                };
                rig.route(out);
                if let Some(cred) = auth {
                    let out = rig.gw.on_north(id, &Frame::text(MsgType::Auth, 1, cred));
                    rig.route(out);
                }
                let granted = auth == Some("app:pw") && addr == "10.20.3.4";
                for (i, (t, body, needs)) in requests.iter().enumerate() {
                    let before = rig.forwarded;
                    let out = rig.gw.on_north(id, &Frame::text(*t, 10 + i as u32, *body));
                    rig.route(out);
                    let crossed = rig.forwarded > before;
                    let allowed = granted && needs.iter().all(|s| scopes.contains(*s));
                    if allowed {
                        allowed_ok += usize::from(crossed);
                    } else {
                        denied_sent += 1;
                        leaked += usize::from(crossed);
                    }
                }
                if !granted {
                    rig.dev.step();
                    let touched = !rig.dev.audit_log().is_empty()
                        || rig.dev.plc().interlock(2)
                        || !rig.dev.plc().state().missions.is_empty();
                    leaked += usize::from(touched);
                }
            }
        }
    }
    check(
        leaked == 0 && allowed_ok > 0,
        format!("{cases} scope x whitelist x credential cases, {denied_sent} denied requests, 0 reached the device"),
        || format!("{leaked} denied requests reached the device"),
    )
}

fn c8_replay() -> Outcome {
    let mut lines = 0;
    for s in scenarios() {
        let o = run_scenario(&s, &RunOptions::default()).map_err(|e| e.to_string())?;
        for round in 1..=2 {
            match replay(&o.trace).map_err(|e| e.to_string())? {
                Verdict::Identical => {}
                v => return Err(format!("{} replay {round}: {v}", s.name)),
            }
        }
        lines += o.trace.len();
    }
    Ok(format!("{} scenarios replayed twice, {lines} trace lines identical", BUNDLED.len()))
}

fn c10_kpi() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut windows = 0;
    let mut flagged = 0;
    let mut gaps = 0;
    for s in scenarios() {
        let opts = RunOptions {
            record_ledger: true,
            ..RunOptions::default()
        };
        let o = run_scenario(&s, &opts).map_err(|e| e.to_string())?;
        let ledgers = o.stack.ledgers();
        let last = ledgers.len() as u64 - 1;
        // Outages the scenario itself causes, as (start, end) ticks.
        let severs: Vec<(u64, u64)> = s
            .schedule
            .iter()
            .filter_map(|e| match &e.action {
                user_cli::Action::Fault(f) => match f.kind {
                    user_cli::FaultKind::Sever(d) => Some((e.tick, e.tick + d)),
                    _ => None,
                },
                _ => None,
            })
            .collect();
        for &(a, b) in o.stack.core().kpi().gaps() {
            let explained = a == 0 || severs.iter().any(|&(s0, s1)| a <= s1 && b >= s1 && b > s0);
            if !explained {
                return Err(format!("{}: data gap ({a}, {b}) matches no outage", s.name));
            }
        }
        gaps += o.stack.core().kpi().gaps().len();
        let mut spans: BTreeSet<(u64, u64)> = [(0, last)].into();
        while spans.len() < KPI_WINDOWS / BUNDLED.len() {
            let a = rng.random_range(0..=last);
            let b = rng.random_range(a..=last);
            spans.insert((a, b));
        }
        for (a, b) in spans {
            let r = o.stack.core().kpi_report(Some(a), Some(b));
            let seen = o.stack.core().kpi();
            if !(seen.known_at(a) && seen.known_at(b)) {
                if r.complete {
                    return Err(format!("{} window ({a}, {b}] spans an outage but claims to be complete", s.name));
                }
                flagged += 1;
                continue;
            }
            let (la, lb) = (&ledgers[a as usize], &ledgers[b as usize]);
            let energy: BTreeMap<String, u64> =
                lb.energy_uj.iter().map(|(k, v)| (k.clone(), v - la.energy_uj[k])).collect();
            let material: BTreeMap<usize, u64> =
                lb.material_units.iter().map(|(k, v)| (*k, v - la.material_units[k])).collect();
            let waste: BTreeMap<usize, u64> = lb.waste_units.iter().map(|(k, v)| (*k, v - la.waste_units[k])).collect();
            if !r.complete || r.energy_uj != energy || r.material != material || r.waste != waste {
                return Err(format!("{} window ({a}, {b}]: report {r:?}", s.name));
            }
            if r.energy_total_uj != energy.values().sum::<u64>() {
                return Err(format!("{} window ({a}, {b}]: total mismatch", s.name));
            }
            windows += 1;
        }
    }
    if gaps == 0 || flagged == 0 {
        return Err("no outage exercised the incomplete-window path".into());
    }
    Ok(format!(
        "{windows} windows over {} scenarios exact; {flagged} windows inside {gaps} outages flagged incomplete",
        BUNDLED.len()
    ))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut failed = 0;
    let mut report = |n: u32, name: &str, r: Outcome| {
        match &r {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d}")
            }
        }
    };
    report(1, "pass docking from three origins", c1_three_origins());
    report(2, "one second round trip", c2_one_second());
    let random = random_runs();
    match &random {
        Ok(r) => {
            report(3, "master authority", c3_authority(r));
            report(6, "interlock soundness", c6_interlock(r));
        }
        Err(e) => {
            report(3, "master authority", Err(e.clone()));
            report(6, "interlock soundness", Err(e.clone()));
        }
    }
    report(4, "mirror consistency", c4_mirror());
    report(5, "divergence bound", c5_divergence());
    report(7, "protocol robustness", c7_codec());
    report(8, "deterministic replay", c8_replay());
    report(9, "security gate", c9_security());
    report(10, "KPI accounting", c10_kpi());
    println!("acceptance: {} failed, {:.1} s", failed, started.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
