use axum::body::Body;
use axum::http::{Request, StatusCode};
use dt_core::api::{channels, router, run_core};
use dt_core::{Core, CoreConfig};
use tag_protocol::{Frame, MsgType};
use tokio::sync::mpsc;
use tower::ServiceExt;

async fn call(app: &axum::Router, method: &str, uri: &str, body: &str) -> (StatusCode, serde_json::Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), 1 << 20).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null))
}

#[tokio::test]
async fn routes_reach_the_core() {
    let ch = channels();
    let app = router(ch.handle.clone());
    let (mut calls, stream) = (ch.calls, ch.stream);
    let (_in_tx, in_rx) = mpsc::channel::<Frame>(16);
    let (out_tx, mut out_rx) = mpsc::channel::<Frame>(16);
    let core = Core::new(CoreConfig::new("twin:twin-secret", 6)).unwrap();
    tokio::spawn(async move {
        run_core(core, || 0, in_rx, out_tx, &mut calls, &stream).await;
    });

    let (s, things) = call(&app, "GET", "/things", "").await;
    assert_eq!(s, StatusCode::OK);
    // Six stations, the line and fourteen energy meters.
    assert_eq!(things.as_array().unwrap().len(), 21);

    let (s, t) = call(&app, "GET", "/things/station-4", "").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(t["template"], "DockingStation");
    assert_eq!(call(&app, "GET", "/things/nope", "").await.0, StatusCode::NOT_FOUND);

    let (s, m) = call(&app, "POST", "/missions", r#"{"kind":"pass","station":2,"origin":"twin"}"#).await;
    assert_eq!(s, StatusCode::OK, "{m}");
    let id = m["mission_id"].as_u64().unwrap();
    let (s, m) = call(&app, "GET", &format!("/missions/{id}"), "").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(m["state"], "Requested");

    let mut kinds = Vec::new();
    while let Ok(f) = out_rx.try_recv() {
        kinds.push(f.msg_type());
    }
    assert_eq!(kinds, [MsgType::Auth, MsgType::Subscribe, MsgType::Write]);

    let bad = [
        ("POST", "/missions", r#"{"kind":"pass","station":2,"origin":"moon"}"#),
        ("POST", "/missions", "not json"),
        ("GET", "/kpi?from=x", ""),
    ];
    for (method, uri, body) in bad {
        let (s, e) = call(&app, method, uri, body).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{uri}");
        assert_eq!(e["error"], "BadRequest");
    }
    assert_eq!(call(&app, "GET", "/missions/77", "").await.0, StatusCode::NOT_FOUND);

    let (s, k) = call(&app, "GET", "/kpi?from=0&to=10", "").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(k["energy_total_uj"], 0);
    assert_eq!(call(&app, "GET", "/metrics/sync", "").await.0, StatusCode::OK);
    assert_eq!(call(&app, "GET", "/estimates", "").await.0, StatusCode::OK);
}
