//! HTTP service over a [`Core`] owned by a single task. Handlers never
//! touch the core directly: each request becomes an [`ApiCall`] on an
//! ordered queue, so API reads see the same total order as telemetry.

use std::collections::HashMap;
use std::time::Duration;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tag_protocol::Frame;
use tokio::sync::{broadcast, mpsc, oneshot};

use crate::core::{ApiRequest, ApiResponse, Core};

pub struct ApiCall {
    pub req: ApiRequest,
    pub reply: oneshot::Sender<ApiResponse>,
}

/// The API side's view of the owner task.
#[derive(Clone)]
pub struct CoreHandle {
    calls: mpsc::Sender<ApiCall>,
    stream: broadcast::Sender<String>,
}

impl CoreHandle {
    pub fn new(calls: mpsc::Sender<ApiCall>, stream: broadcast::Sender<String>) -> Self {
        Self { calls, stream }
    }

    pub async fn call(&self, req: ApiRequest) -> ApiResponse {
        let (tx, rx) = oneshot::channel();
        if self.calls.send(ApiCall { req, reply: tx }).await.is_err() {
            return unavailable();
        }
        rx.await.unwrap_or_else(|_| unavailable())
    }

    pub fn subscribe(&self) -> broadcast::Receiver<String> {
        self.stream.subscribe()
    }
}

fn unavailable() -> ApiResponse {
    ApiResponse {
        status: 503,
        body: serde_json::json!({ "error": "Unavailable", "detail": "core stopped" }),
    }
}

impl IntoResponse for ApiResponse {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct MissionBody {
    kind: String,
    station: usize,
    origin: String,
    direction: Option<String>,
}

#[derive(Debug, Deserialize)]
struct InterlockBody {
    station: usize,
    on: bool,
}

fn bad_request(detail: impl Into<String>) -> ApiResponse {
    ApiResponse {
        status: 400,
        body: serde_json::json!({ "error": "BadRequest", "detail": detail.into() }),
    }
}

async fn things(State(h): State<CoreHandle>) -> ApiResponse {
    h.call(ApiRequest::Things).await
}

async fn thing(State(h): State<CoreHandle>, Path(id): Path<String>) -> ApiResponse {
    h.call(ApiRequest::Thing(id)).await
}

async fn submit(State(h): State<CoreHandle>, body: axum::body::Bytes) -> ApiResponse {
    match serde_json::from_slice::<MissionBody>(&body) {
        Ok(b) => {
            h.call(ApiRequest::SubmitMission {
                kind: b.kind,
                station: b.station,
                origin: b.origin,
                direction: b.direction,
            })
            .await
        }
        Err(e) => bad_request(e.to_string()),
    }
}

async fn missions(State(h): State<CoreHandle>) -> ApiResponse {
    h.call(ApiRequest::Missions).await
}

async fn mission(State(h): State<CoreHandle>, Path(id): Path<String>) -> ApiResponse {
    match id.parse() {
        Ok(id) => h.call(ApiRequest::Mission(id)).await,
        Err(_) => ApiResponse {
            status: 404,
            body: serde_json::json!({ "error": "UnknownMission", "detail": id }),
        },
    }
}

async fn estimates(State(h): State<CoreHandle>) -> ApiResponse {
    h.call(ApiRequest::Estimates).await
}

async fn metrics(State(h): State<CoreHandle>) -> ApiResponse {
    h.call(ApiRequest::Metrics).await
}

async fn kpi(State(h): State<CoreHandle>, Query(q): Query<HashMap<String, String>>) -> ApiResponse {
    let num = |k: &str| -> Result<Option<u64>, ApiResponse> {
        q.get(k)
            .map(|v| v.parse().map_err(|_| bad_request(format!("`{k}` must be a tick number"))))
            .transpose()
    };
    match (num("from"), num("to")) {
        (Ok(from), Ok(to)) => h.call(ApiRequest::Kpi { from, to }).await,
        (Err(e), _) | (_, Err(e)) => e,
    }
}

async fn interlock(State(h): State<CoreHandle>, body: axum::body::Bytes) -> ApiResponse {
    match serde_json::from_slice::<InterlockBody>(&body) {
        Ok(b) => h.call(ApiRequest::Interlock { station: b.station, on: b.on }).await,
        Err(e) => bad_request(e.to_string()),
    }
}

/// Newline-delimited JSON, one stream event per line, from now on.
async fn stream(State(h): State<CoreHandle>) -> Response {
    let rx = h.subscribe();
    let lines = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(line) => return Some((Ok::<_, std::convert::Infallible>(format!("{line}\n")), rx)),
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    (
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from_stream(lines),
    )
        .into_response()
}

pub fn router(handle: CoreHandle) -> Router {
    Router::new()
        .route("/things", get(things))
        .route("/things/{id}", get(thing))
        .route("/missions", post(submit).get(missions))
        .route("/missions/{id}", get(mission))
        .route("/estimates", get(estimates))
        .route("/metrics/sync", get(metrics))
        .route("/kpi", get(kpi))
        .route("/interlocks", post(interlock))
        .route("/stream", get(stream))
        .with_state(handle)
}

/// Channels between the owner task and everything else.
pub struct CoreChannels {
    pub handle: CoreHandle,
    pub calls: mpsc::Receiver<ApiCall>,
    pub stream: broadcast::Sender<String>,
}

pub fn channels() -> CoreChannels {
    let (tx, rx) = mpsc::channel(256);
    let (stream, _) = broadcast::channel(4096);
    CoreChannels {
        handle: CoreHandle::new(tx, stream.clone()),
        calls: rx,
        stream,
    }
}

/// Runs the owner loop until the gateway link closes, then hands the core
/// back so the caller can reconnect. `clock` gives the current time in
/// milliseconds on the device's time base.
pub async fn run_core(
    mut core: Core,
    clock: impl Fn() -> u64,
    mut inbound: mpsc::Receiver<Frame>,
    outbound: mpsc::Sender<Frame>,
    calls: &mut mpsc::Receiver<ApiCall>,
    stream: &broadcast::Sender<String>,
) -> Core {
    for f in core.start() {
        if outbound.send(f).await.is_err() {
            return core;
        }
    }
    let mut poll = tokio::time::interval(Duration::from_millis(10));
    let mut api_open = true;
    loop {
        let out = tokio::select! {
            f = inbound.recv() => match f {
                Some(f) => core.on_frame(&f, clock()),
                None => break,
            },
            c = calls.recv(), if api_open => match c {
                Some(c) => {
                    let (resp, frames) = core.handle_api(c.req, clock());
                    let _ = c.reply.send(resp);
                    frames
                }
                None => {
                    api_open = false;
                    Vec::new()
                }
            },
            _ = poll.tick() => {
                core.poll(clock());
                Vec::new()
            }
        };
        for e in core.drain_stream() {
            if let Ok(line) = serde_json::to_string(&e) {
                let _ = stream.send(line);
            }
        }
        for f in out {
            if outbound.send(f).await.is_err() {
                return core;
            }
        }
    }
    core
}
