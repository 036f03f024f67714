use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use proptest::prelude::*;
use tag_protocol::{
    Access, AllowAll, AuthFailure, Authenticator, Frame, Grant, MsgType, Payload, Quality, Scope,
    Scopes, SessionId, TagSample, TagServer, TagValue,
};

const POINTS: [(&str, bool); 7] = [
    ("PALLET_A", false),
    ("PALLET_B", false),
    ("ELEV_A", false),
    ("ELEV_B", false),
    ("STOP", true),
    ("ELEV_CMD", true),
    ("RFID", false),
];

fn station_server(auth: Arc<dyn Authenticator>) -> TagServer {
    let mut s = TagServer::new(auth);
    for k in 1..=6 {
        for (p, writable) in POINTS {
            let v = if p == "RFID" {
                TagValue::Str(String::new())
            } else {
                TagValue::Bool(p == "STOP")
            };
            let access = if writable { Access::Write } else { Access::ReadOnly };
            s.register(&format!("ST{k}.{p}"), v, access).unwrap();
        }
    }
    s.register("SYS.MISSION_REQ", TagValue::Str(String::new()), Access::Mission)
        .unwrap();
    s
}

fn authed(server: &mut TagServer) -> SessionId {
    let id = server.open_session();
    server.handle_request(id, &Frame::text(MsgType::Auth, 0, "k:s"));
    let acks = server.drain(id);
    assert_eq!(acks[0].msg_type(), MsgType::Ack);
    id
}

fn one(server: &mut TagServer, id: SessionId) -> (MsgType, Payload) {
    let frames = server.drain(id);
    assert_eq!(frames.len(), 1, "{frames:?}");
    let p = Payload::parse_bytes(frames[0].payload()).unwrap();
    (frames[0].msg_type(), p)
}

#[test]
fn read_prefix_lists_the_seven_station_tags() {
    let mut server = station_server(Arc::new(AllowAll));
    let id = authed(&mut server);
    server.handle_request(id, &Frame::text(MsgType::Read, 5, "ST1.*"));
    let (t, p) = one(&mut server, id);
    assert_eq!(t, MsgType::Ack);
    assert_eq!(p.req, Some(5));
    let names: Vec<String> = p.assignments().unwrap().into_iter().map(|a| a.name).collect();
    let mut expected: Vec<String> = POINTS.iter().map(|(n, _)| format!("ST1.{n}")).collect();
    expected.sort();
    assert_eq!(names, expected);
}

#[test]
fn write_actuator_and_sensor() {
    let mut server = station_server(Arc::new(AllowAll));
    let id = authed(&mut server);
    let cmds = server.handle_request(id, &Frame::text(MsgType::Write, 2, "ST3.STOP=B:0"));
    let (t, p) = one(&mut server, id);
    assert_eq!((t, p.field("applied")), (MsgType::Ack, Some("1")));
    assert_eq!(cmds.len(), 1);
    assert_eq!(cmds[0].name, "ST3.STOP");
    assert_eq!(cmds[0].value, TagValue::Bool(false));
    assert!(!cmds[0].deferred);
    // The mirror only changes when the owner publishes the new value.
    assert_eq!(server.value("ST3.STOP"), Some(&TagValue::Bool(true)));

    let cmds = server.handle_request(id, &Frame::text(MsgType::Write, 3, "ST1.PALLET_A=B:1"));
    assert!(cmds.is_empty());
    let (t, p) = one(&mut server, id);
    assert_eq!((t, p.field("code"), p.req), (MsgType::Err, Some("ReadOnly"), Some(3)));

    // Writes are atomic: one bad assignment rejects the lot.
    let cmds = server.handle_request(id, &Frame::text(MsgType::Write, 4, "ST1.STOP=B:0\nST9.STOP=B:0"));
    assert!(cmds.is_empty());
    assert_eq!(one(&mut server, id).1.field("code"), Some("UnknownTag"));
    server.handle_request(id, &Frame::text(MsgType::Write, 5, "ST1.STOP=I:0"));
    assert_eq!(one(&mut server, id).1.field("code"), Some("BadPayload"));
    server.handle_request(id, &Frame::text(MsgType::Read, 6, "NOPE"));
    assert_eq!(one(&mut server, id).1.field("code"), Some("UnknownTag"));
}

#[test]
fn only_auth_before_authentication() {
    let mut server = station_server(Arc::new(AllowAll));
    let id = server.open_session();
    for (i, t) in [MsgType::Read, MsgType::Write, MsgType::Subscribe].into_iter().enumerate() {
        let cmds = server.handle_request(id, &Frame::text(t, i as u32, "ST1.STOP=B:0"));
        assert!(cmds.is_empty());
        let (mt, p) = one(&mut server, id);
        assert_eq!((mt, p.field("code")), (MsgType::Err, Some("Unauthenticated")));
    }
}

struct Keyed {
    scopes: Scopes,
    revoked: AtomicBool,
}

impl Authenticator for Keyed {
    fn authenticate(&self, credentials: &str) -> Result<Grant, AuthFailure> {
        if credentials != "app:good" {
            return Err(AuthFailure::BadKey);
        }
        self.check(&Grant { key_id: "app".into(), scopes: self.scopes })?;
        Ok(Grant { key_id: "app".into(), scopes: self.scopes })
    }

    fn check(&self, _grant: &Grant) -> Result<(), AuthFailure> {
        if self.revoked.load(Ordering::SeqCst) {
            Err(AuthFailure::Revoked)
        } else {
            Ok(())
        }
    }
}

#[test]
fn scope_matrix() {
    for bits in 0..16u8 {
        let scopes = Scopes::from_bits(bits);
        let auth = Arc::new(Keyed { scopes, revoked: AtomicBool::new(false) });
        let mut server = station_server(auth);
        let id = server.open_session();
        server.handle_request(id, &Frame::text(MsgType::Auth, 0, "app:good"));
        assert_eq!(one(&mut server, id).0, MsgType::Ack);
        let cases = [
            (MsgType::Read, "ST1.STOP", vec![Scope::ReadTags]),
            (MsgType::Write, "ST1.STOP=B:0", vec![Scope::WriteTags]),
            (MsgType::Subscribe, "ST1.*", vec![Scope::Subscribe]),
            (
                MsgType::Write,
                "SYS.MISSION_REQ=S:PassDockingStation%3B1%3BTwin",
                vec![Scope::WriteTags, Scope::SubmitMission],
            ),
        ];
        for (seq, (t, body, needed)) in cases.into_iter().enumerate() {
            let seq = seq as u32 + 1;
            let cmds = server.handle_request(id, &Frame::text(t, seq, body));
            let allowed = needed.iter().all(|s| scopes.contains(*s));
            let frames = server.drain(id);
            if allowed {
                let deferred = body.starts_with("SYS.MISSION_REQ");
                assert_eq!(frames.is_empty(), deferred, "bits {bits:04b} {t:?}");
                if deferred {
                    assert!(cmds[0].deferred);
                    assert!(server.reply_ack(id, seq, vec!["mission_id=1".into()]));
                    assert!(!server.reply_ack(id, seq, vec![]), "second terminal reply");
                    let (mt, p) = one(&mut server, id);
                    assert_eq!((mt, p.req), (MsgType::Ack, Some(seq)));
                } else {
                    assert_eq!(frames[0].msg_type(), MsgType::Ack);
                }
            } else {
                assert!(cmds.is_empty());
                let p = Payload::parse_bytes(frames[0].payload()).unwrap();
                assert_eq!(frames[0].msg_type(), MsgType::Err, "bits {bits:04b} {t:?}");
                assert_eq!(p.field("code"), Some("Unauthenticated"));
                let missing = needed.iter().find(|s| !scopes.contains(**s)).unwrap();
                assert_eq!(p.field("scope"), Some(missing.name()));
            }
        }
    }
}

#[test]
fn three_bad_keys_close_the_session() {
    let auth = Arc::new(Keyed { scopes: Scopes::ALL, revoked: AtomicBool::new(false) });
    let mut server = station_server(auth);
    let id = server.open_session();
    for i in 0..3 {
        assert!(server.is_open(id));
        server.handle_request(id, &Frame::text(MsgType::Auth, i, "app:bad"));
        assert_eq!(one(&mut server, id).1.field("code"), Some("BadKey"));
    }
    assert!(!server.is_open(id));
    server.handle_request(id, &Frame::text(MsgType::Auth, 9, "app:good"));
    assert!(server.drain(id).is_empty());
}

#[test]
fn revocation_applies_to_the_next_request() {
    let auth = Arc::new(Keyed { scopes: Scopes::ALL, revoked: AtomicBool::new(false) });
    let mut server = station_server(auth.clone());
    let id = server.open_session();
    server.handle_request(id, &Frame::text(MsgType::Auth, 0, "app:good"));
    server.handle_request(id, &Frame::text(MsgType::Read, 1, "ST1.STOP"));
    assert_eq!(server.drain(id).len(), 2);
    auth.revoked.store(true, Ordering::SeqCst);
    server.handle_request(id, &Frame::text(MsgType::Read, 2, "ST1.STOP"));
    assert_eq!(one(&mut server, id).1.field("code"), Some("Revoked"));
    server.handle_request(id, &Frame::text(MsgType::Read, 3, "ST1.STOP"));
    assert_eq!(one(&mut server, id).1.field("code"), Some("Unauthenticated"));
}

fn sample(name: &str, v: bool, tick: u64) -> TagSample {
    TagSample { name: name.into(), value: TagValue::Bool(v), quality: Quality::Good, tick }
}

#[test]
fn publish_respects_filters_and_order() {
    let mut server = station_server(Arc::new(AllowAll));
    assert_eq!(server.publish_changes(&[sample("ST2.PALLET_A", true, 1)]).unwrap(), 0);

    let a = authed(&mut server);
    let b = authed(&mut server);
    server.handle_request(a, &Frame::text(MsgType::Subscribe, 1, "ST2.*"));
    server.handle_request(b, &Frame::text(MsgType::Subscribe, 1, "ST3.*"));
    let (_, snap) = one(&mut server, a);
    assert_eq!(snap.assignments().unwrap().len(), 7);
    server.drain(b);

    server
        .publish_changes(&[sample("ST2.PALLET_A", false, 2), sample("ST2.PALLET_A", true, 3)])
        .unwrap();
    assert!(server.drain(b).is_empty());
    let frames = server.drain(a);
    let ticks: Vec<Option<u64>> = frames
        .iter()
        .map(|f| Payload::parse_bytes(f.payload()).unwrap().tick)
        .collect();
    assert_eq!(ticks, vec![Some(2), Some(3)]);

    // An older timestamp for the same tag is never sent.
    server.publish_changes(&[sample("ST2.PALLET_A", false, 3)]).unwrap();
    assert!(server.drain(a).is_empty());
}

#[test]
fn stale_quality_is_flagged() {
    let mut server = station_server(Arc::new(AllowAll));
    let a = authed(&mut server);
    server.handle_request(a, &Frame::text(MsgType::Subscribe, 1, "ST1.STOP"));
    server.drain(a);
    let mut s = sample("ST1.STOP", true, 4);
    s.quality = Quality::Stale;
    server.publish_changes(&[s]).unwrap();
    let (_, p) = one(&mut server, a);
    assert_eq!(p.stale, vec!["ST1.STOP".to_string()]);
    server.handle_request(a, &Frame::text(MsgType::Read, 2, "ST1.STOP"));
    assert_eq!(one(&mut server, a).1.stale, vec!["ST1.STOP".to_string()]);
}

#[test]
fn slow_consumer_is_disconnected() {
    let mut server = station_server(Arc::new(AllowAll)).with_queue_limit(16);
    let id = authed(&mut server);
    server.handle_request(id, &Frame::text(MsgType::Subscribe, 1, "*"));
    for t in 1..=40 {
        server.publish_changes(&[sample("ST1.PALLET_A", t % 2 == 0, t)]).unwrap();
    }
    assert!(!server.is_open(id));
    let (t, p) = one(&mut server, id);
    assert_eq!((t, p.field("code")), (MsgType::Err, Some("Overflow")));
}

proptest! {
    /// Every request gets exactly one terminal response echoing its seq, and
    /// per-tag publish ticks strictly increase.
    #[test]
    fn seq_echo_and_publish_order(
        ops in proptest::collection::vec((0u8..5, 0usize..6, any::<bool>(), 0u64..4), 1..80)
    ) {
        let mut server = station_server(Arc::new(AllowAll));
        let id = authed(&mut server);
        let mut tick = 0u64;
        let mut sent = Vec::new();
        let mut frames = Vec::new();
        for (seq, (op, k, v, dt)) in ops.into_iter().enumerate() {
            let seq = seq as u32 + 1;
            let name = format!("ST{}.PALLET_A", k + 1);
            match op {
                0 => { server.handle_request(id, &Frame::text(MsgType::Read, seq, format!("ST{}.*", k + 1))); sent.push(seq); }
                1 => { server.handle_request(id, &Frame::text(MsgType::Write, seq, format!("ST{}.STOP=B:{}", k + 1, u8::from(v)))); sent.push(seq); }
                2 => { server.handle_request(id, &Frame::text(MsgType::Subscribe, seq, name.clone())); sent.push(seq); }
                3 => { server.handle_request(id, &Frame::text(MsgType::Write, seq, name.clone() + "=B:1")); sent.push(seq); }
                _ => {
                    tick += dt;
                    server.publish_changes(&[sample(&name, v, tick)]).unwrap();
                }
            }
            frames.extend(server.drain(id));
        }
        let mut answered = Vec::new();
        let mut last: std::collections::HashMap<String, u64> = Default::default();
        for f in &frames {
            let p = Payload::parse_bytes(f.payload()).unwrap();
            match f.msg_type() {
                MsgType::Ack | MsgType::Err => answered.push(p.req.unwrap()),
                MsgType::Publish => {
                    let t = p.tick.unwrap();
                    for a in p.assignments().unwrap() {
                        if let Some(prev) = last.insert(a.name.clone(), t) {
                            prop_assert!(t > prev);
                        }
                    }
                }
                other => prop_assert!(false, "unexpected {:?}", other),
            }
        }
        prop_assert_eq!(answered, sent);
    }
}
