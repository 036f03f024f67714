//! Drives a core with hand-built gateway frames.

use dt_core::line::north;
use dt_core::{Core, CoreConfig, MissionState, StreamEvent};
use plc_control::{MissionKind, Origin};
use tag_protocol::payload::format_assignment;
use tag_protocol::{Frame, MsgType, Payload, TagAssignment, TagValue};

fn body(tick: Option<u64>, req: Option<u32>, tags: &[(&str, TagValue)]) -> String {
    Payload {
        req,
        tick,
        stale: Vec::new(),
        body: tags
            .iter()
            .map(|(n, v)| format_assignment(&TagAssignment::new(north(n), v.clone())))
            .collect(),
    }
    .render()
}

fn publish(tick: u64, tags: &[(&str, TagValue)]) -> Frame {
    Frame::text(MsgType::Publish, 0, body(Some(tick), None, tags))
}

fn ack(req: u32, lines: &[&str]) -> Frame {
    let p = Payload {
        req: Some(req),
        body: lines.iter().map(|l| l.to_string()).collect(),
        ..Payload::default()
    };
    Frame::text(MsgType::Ack, 0, p.render())
}

/// A core that has authenticated and holds a subscription snapshot at `tick`.
fn connected(tick: u64, snapshot: &[(&str, TagValue)]) -> Core {
    let mut core = Core::new(CoreConfig::new("twin:twin-secret", 6)).unwrap();
    let opening = core.start();
    assert_eq!(opening[0].msg_type(), MsgType::Auth);
    assert_eq!(opening[1].msg_type(), MsgType::Subscribe);
    core.on_frame(&ack(opening[0].seq(), &["scopes=read"]), 0);
    let snap = Frame::text(MsgType::Ack, 0, body(Some(tick), Some(opening[1].seq()), snapshot));
    core.on_frame(&snap, tick * 50);
    core
}

fn mission_states(core: &mut Core) -> Vec<(u64, MissionState)> {
    core.drain_stream()
        .into_iter()
        .filter_map(|e| match e {
            StreamEvent::Mission { mission_id, state, .. } => Some((mission_id, state)),
            _ => None,
        })
        .collect()
}

#[test]
fn snapshot_fills_properties() {
    let core = connected(3, &[("ST2.STOP", TagValue::Bool(true)), ("ST2.RFID", TagValue::Str("P-001".into()))]);
    let s2 = core.model().thing("station-2").unwrap();
    assert_eq!(s2.properties["Stop"].value, TagValue::Bool(true));
    assert!(s2.properties["Stop"].initialized);
    assert_eq!(s2.properties["Rfid"].value, TagValue::Str("P-001".into()));
    assert!(!s2.properties["PalletA"].initialized);
    assert_eq!(core.last_tick(), Some(3));
}

#[test]
fn arrival_event_sees_the_rfid_from_the_same_batch() {
    let mut core = connected(0, &[("ST3.PALLET_A", TagValue::Bool(false))]);
    core.on_frame(
        &publish(
            5,
            &[
                ("ST3.PALLET_A", TagValue::Bool(true)),
                ("ST3.RFID", TagValue::Str("P-002".into())),
            ],
        ),
        260,
    );
    let s3 = core.model().thing("station-3").unwrap();
    let arrived: Vec<_> = s3.events.iter().filter(|e| e.event == "PalletArrived").collect();
    assert_eq!(arrived.len(), 1);
    assert_eq!(arrived[0].data["Rfid"], "P-002");
    assert_eq!(arrived[0].tick, Some(5));
}

#[test]
fn edges_fire_once() {
    let mut core = connected(0, &[("ST1.PALLET_A", TagValue::Bool(false))]);
    let seq = [true, true, false, false, true];
    for (i, v) in seq.into_iter().enumerate() {
        core.on_frame(&publish(i as u64 + 1, &[("ST1.PALLET_A", TagValue::Bool(v))]), 0);
    }
    let names: Vec<_> = core.model().thing("station-1").unwrap().events.iter().map(|e| e.event.clone()).collect();
    assert_eq!(names, ["PalletArrived", "PalletDeparted", "PalletArrived"]);
    let seqs: Vec<u64> = core.model().thing("station-1").unwrap().events.iter().map(|e| e.seq).collect();
    assert!(seqs.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn mission_follows_ack_then_status() {
    let mut core = connected(0, &[]);
    core.drain_stream();
    let (id, frames) = core.request_mission(MissionKind::PassDockingStation(1), Origin::Twin, 1000);
    assert_eq!(frames[0].msg_type(), MsgType::Write);
    core.on_frame(&ack(frames[0].seq(), &["mission_id=9", "tick=21"]), 1100);
    assert_eq!(core.mission(id).unwrap().state, MissionState::Validated);
    assert_eq!(core.mission(id).unwrap().plc_mission_id, Some(9));
    assert_eq!(core.mission(id).unwrap().validated_tick, Some(21));
    core.on_frame(&publish(22, &[("SYS.MISSION_1", TagValue::Str("9:Executing:pass 1 twin".into()))]), 1150);
    core.on_frame(&publish(60, &[("SYS.MISSION_1", TagValue::Str("9:Completed:pass 1 twin".into()))]), 3050);
    assert_eq!(
        mission_states(&mut core),
        [
            (id, MissionState::Requested),
            (id, MissionState::Validated),
            (id, MissionState::Executing),
            (id, MissionState::Completed)
        ]
    );
    assert_eq!(core.metrics().mission_rtt_ms.count, 1);
}

#[test]
fn status_before_ack_is_held() {
    let mut core = connected(0, &[]);
    let (id, frames) = core.request_mission(MissionKind::PassDockingStation(2), Origin::Hmi, 0);
    core.on_frame(&publish(5, &[("SYS.MISSION_2", TagValue::Str("4:Completed:pass 2 hmi".into()))]), 250);
    assert_eq!(core.mission(id).unwrap().state, MissionState::Requested);
    core.on_frame(&ack(frames[0].seq(), &["mission_id=4", "tick=3"]), 300);
    assert_eq!(core.mission(id).unwrap().state, MissionState::Completed);
}

#[test]
fn refusals_carry_their_reason() {
    let mut core = connected(0, &[]);
    let (a, fa) = core.request_mission(MissionKind::PassDockingStation(1), Origin::Twin, 0);
    let (b, fb) = core.request_mission(MissionKind::PassDockingStation(2), Origin::Twin, 0);
    core.on_frame(&ack(fa[0].seq(), &["rejected=InterlockEngaged", "tick=4"]), 200);
    let err = Payload {
        req: Some(fb[0].seq()),
        body: vec!["code=Unauthenticated".into()],
        ..Payload::default()
    };
    core.on_frame(&Frame::text(MsgType::Err, 0, err.render()), 200);
    for (id, reason) in [(a, "InterlockEngaged"), (b, "Unauthorized")] {
        let m = core.mission(id).unwrap();
        assert_eq!(m.state, MissionState::Rejected);
        assert_eq!(m.reason.as_deref(), Some(reason));
    }
    assert!(core.replications().is_empty());
}

#[test]
fn silence_times_out_and_marks_stale() {
    let mut core = connected(0, &[]);
    let (id, _) = core.request_mission(MissionKind::PassDockingStation(1), Origin::Twin, 1000);
    core.poll(5999);
    assert_eq!(core.mission(id).unwrap().state, MissionState::Requested);
    core.poll(6000);
    let m = core.mission(id).unwrap();
    assert_eq!(m.state, MissionState::TimedOut);
    assert_eq!(m.reason.as_deref(), Some("NoResponse"));
    assert!(core.is_stale());
    core.on_frame(&publish(130, &[("SYS.QUEUE_STOP", TagValue::Bool(true))]), 6500);
    assert!(!core.is_stale());
}

#[test]
fn kpi_windows_difference_the_ledger() {
    let energy = |uj: f64| ("SYS.ENERGY.CONVEYOR", TagValue::Float(uj));
    let mut core = connected(0, &[energy(0.0), ("SYS.MATERIAL.ST1", TagValue::Int(0))]);
    core.on_frame(&publish(10, &[energy(60e6)]), 500);
    core.on_frame(&publish(20, &[energy(120e6), ("SYS.MATERIAL.ST1", TagValue::Int(1))]), 1000);
    let r = core.kpi_report(Some(10), Some(20));
    assert_eq!(r.energy_uj["CONVEYOR"], 60_000_000);
    assert_eq!(r.energy_total_uj, 60_000_000);
    assert_eq!(r.material[&1], 1);
    assert!(r.complete);
    // Ticks between two ledger changes carry the earlier value.
    assert_eq!(core.kpi_report(Some(0), Some(15)).energy_uj["CONVEYOR"], 60_000_000);
    assert_eq!(core.kpi_report(None, None).to, 20);
}

#[test]
fn reconnect_leaves_a_marked_gap() {
    let energy = |uj: f64| ("SYS.ENERGY.CONVEYOR", TagValue::Float(uj));
    let mut core = connected(0, &[energy(0.0)]);
    core.on_frame(&publish(20, &[energy(120e6)]), 1000);
    let again = core.start();
    core.on_frame(&ack(again[0].seq(), &["scopes=read"]), 2500);
    let snap = Frame::text(MsgType::Ack, 0, body(Some(50), Some(again[1].seq()), &[energy(300e6)]));
    core.on_frame(&snap, 2500);
    assert_eq!(core.kpi().gaps(), [(20, 50)]);
    assert!(!core.kpi_report(Some(0), Some(30)).complete);
    let whole = core.kpi_report(Some(0), Some(50));
    assert!(whole.complete);
    assert_eq!(whole.energy_uj["CONVEYOR"], 300_000_000);
}
