//! HTTP API and the `/events` server-sent event stream.

use std::convert::Infallible;
use std::sync::Arc;

use airays_core::backends::{BackendMode, Capability};
use airays_core::pipeline::PipelineError;
use airays_core::raster::CapturedFrame;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::{broadcast, oneshot};

use crate::audits::{run_and_write, AuditRequest};
use crate::events::{Body, Envelope, EVENTS_SCHEMA_VERSION};
use crate::runtime::{Command, Shared};

type AppState = Arc<Shared>;

pub fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/state", get(get_state))
        .route("/events", get(events))
        .route("/healthz", get(healthz))
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(get_run).delete(delete_run))
        .route("/runs/{id}/composite.png", get(get_composite))
        .route("/trigger", post(trigger))
        .route("/frames", post(post_frame))
        .route("/audit", post(post_audit))
        .route("/clock/advance", post(advance_clock))
        .with_state(shared)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn store_error(e: PipelineError) -> Response {
    match e {
        PipelineError::NotFound(_) => error(StatusCode::NOT_FOUND, e.to_string()),
        _ => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, Response> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

async fn get_state(State(s): State<AppState>) -> Response {
    Json(s.snapshot()).into_response()
}

async fn list_runs(State(s): State<AppState>) -> Response {
    let st = s.clone();
    match blocking(move || st.store.list()).await {
        Ok(Ok(ids)) => Json(json!({ "runs": ids })).into_response(),
        Ok(Err(e)) => store_error(e),
        Err(r) => r,
    }
}

async fn get_run(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    match blocking(move || s.store.load_bytes(&id)).await {
        Ok(Ok(bytes)) => ([(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Ok(Err(e)) => store_error(e),
        Err(r) => r,
    }
}

async fn get_composite(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    match blocking(move || s.store.composite_png(&id)).await {
        Ok(Ok(bytes)) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Ok(Err(e)) => store_error(e),
        Err(r) => r,
    }
}

async fn delete_run(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    match blocking(move || s.store.delete(&id)).await {
        Ok(Ok(())) => StatusCode::NO_CONTENT.into_response(),
        Ok(Err(e)) => store_error(e),
        Err(r) => r,
    }
}

fn decode_frame(s: &Shared, body: &[u8], source: &str) -> Result<CapturedFrame, Response> {
    CapturedFrame::from_png(body, s.clock.now_ms(), source).map_err(|e| error(StatusCode::BAD_REQUEST, format!("frame: {e}")))
}

/// Optional PNG body is used as the capture frame.
async fn trigger(State(s): State<AppState>, body: Bytes) -> Response {
    let frame = if body.is_empty() {
        None
    } else {
        match decode_frame(&s, &body, "trigger") {
            Ok(f) => Some(f),
            Err(r) => return r,
        }
    };
    let (tx, rx) = oneshot::channel();
    if !s.send(Command::Trigger { frame, reply: tx }) {
        return error(StatusCode::SERVICE_UNAVAILABLE, "installation loop stopped");
    }
    match rx.await {
        Ok(Ok(state)) => (StatusCode::ACCEPTED, Json(json!({ "state": state }))).into_response(),
        Ok(Err(state)) => (
            StatusCode::CONFLICT,
            Json(json!({ "error": format!("cannot trigger in state {state:?}"), "state": state })),
        )
            .into_response(),
        Err(_) => error(StatusCode::SERVICE_UNAVAILABLE, "installation loop stopped"),
    }
}

async fn post_frame(State(s): State<AppState>, body: Bytes) -> Response {
    let frame = match decode_frame(&s, &body, "upload") {
        Ok(f) => f,
        Err(r) => return r,
    };
    let st = s.clone();
    let (frame, present, outage) = match blocking(move || {
        let (p, o) = st.read_presence(&frame);
        (frame, p, o)
    })
    .await
    {
        Ok(v) => v,
        Err(r) => return r,
    };
    s.send(Command::Frame { frame, present, outage });
    (StatusCode::ACCEPTED, Json(json!({ "present": present, "outage": outage }))).into_response()
}

async fn post_audit(State(s): State<AppState>, Json(req): Json<AuditRequest>) -> Response {
    let st = s.clone();
    match blocking(move || run_and_write(&req, &st.config.audit, &*st.backends)).await {
        Ok(Ok(out)) => {
            let status = if out.complete { StatusCode::OK } else { StatusCode::UNPROCESSABLE_ENTITY };
            (status, Json(out)).into_response()
        }
        Ok(Err(e)) => error(StatusCode::BAD_REQUEST, e),
        Err(r) => r,
    }
}

async fn healthz(State(s): State<AppState>) -> Response {
    let probes = Capability::ALL.map(|cap| {
        let st = s.clone();
        tokio::task::spawn_blocking(move || st.backends.probe(cap))
    });
    let mut caps = serde_json::Map::new();
    let mut all = true;
    for (cap, probe) in Capability::ALL.into_iter().zip(probes) {
        let reachable = probe.await.unwrap_or(false);
        all &= reachable;
        let mode = s
            .config
            .backends
            .iter()
            .find(|e| e.0.capability == cap)
            .map_or(BackendMode::Stub, |e| e.0.mode);
        caps.insert(cap.as_str().into(), json!({ "mode": mode, "reachable": reachable }));
    }
    Json(json!({ "status": if all { "ok" } else { "degraded" }, "capabilities": caps })).into_response()
}

#[derive(Deserialize)]
struct Advance {
    ms: u64,
}

/// Test hook: only with `virtual_clock` configured.
async fn advance_clock(State(s): State<AppState>, Json(a): Json<Advance>) -> Response {
    let Some(clock) = &s.virtual_clock else {
        return error(StatusCode::NOT_FOUND, "service is on the system clock");
    };
    let now = clock.advance(a.ms);
    s.send(Command::Wake);
    Json(json!({ "now_ms": now })).into_response()
}

fn sse(env: &Envelope) -> SseEvent {
    SseEvent::default()
        .event(env.body.kind())
        .id(env.seq.to_string())
        .data(serde_json::to_string(env).expect("envelope serializes"))
}

async fn events(State(s): State<AppState>) -> Sse<impl Stream<Item = Result<SseEvent, Infallible>>> {
    let (snap, rx) = s.subscribe();
    let first = Envelope {
        v: EVENTS_SCHEMA_VERSION,
        seq: snap.seq,
        audience: Body::Snapshot(snap.clone()).audience(),
        at_ms: snap.now_ms,
        body: Body::Snapshot(snap),
    };
    let stream = futures::stream::unfold((Some(first), rx), |(first, mut rx)| async move {
        if let Some(f) = first {
            return Some((Ok(sse(&f)), (None, rx)));
        }
        let ev = match rx.recv().await {
            Ok(env) => sse(&env),
            Err(broadcast::error::RecvError::Lagged(n)) => {
                SseEvent::default().event("lagged").data(json!({ "missed": n }).to_string())
            }
            Err(broadcast::error::RecvError::Closed) => return None,
        };
        Some((Ok(ev), (None, rx)))
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}
