//! All five stub capabilities behind the same JSON wire format the remote
//! adapters speak, so a remote configuration can run fully offline.

use airays_core::backends::wire::{decode_b64, encode_b64, DetectionResponse, ImageRequest, ImageResponse, InferenceResponse, WireBox};
use airays_core::backends::{BackendError, DetectionBox, ModelBackend, StubBackend};
use airays_core::raster::CapturedFrame;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

pub fn router() -> Router {
    Router::new()
        .route("/healthz", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/inference", post(inference))
        .route("/detection", post(detection))
        .route("/segmentation", post(segmentation))
        .route("/matting", post(matting))
        .route("/styling", post(styling))
}

fn bad(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

fn backend_err(e: BackendError) -> Response {
    bad(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
}

fn frame_of(req: &ImageRequest) -> Result<CapturedFrame, Response> {
    let bytes = decode_b64(&req.image).map_err(|e| bad(StatusCode::BAD_REQUEST, e))?;
    CapturedFrame::from_png(&bytes, 0, "wire").map_err(|e| bad(StatusCode::BAD_REQUEST, e.to_string()))
}

fn png_reply(png: Result<Vec<u8>, impl ToString>) -> Response {
    match png {
        Ok(p) => Json(ImageResponse { image: encode_b64(&p) }).into_response(),
        Err(e) => bad(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Stub calls are CPU work; keep them off the reactor.
async fn offload<T: IntoResponse + Send + 'static>(
    req: ImageRequest,
    f: impl FnOnce(ImageRequest, CapturedFrame) -> Result<T, Response> + Send + 'static,
) -> Response {
    let frame = match frame_of(&req) {
        Ok(f) => f,
        Err(r) => return r,
    };
    match tokio::task::spawn_blocking(move || f(req, frame)).await {
        Ok(Ok(v)) => v.into_response(),
        Ok(Err(r)) => r,
        Err(e) => bad(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn inference(Json(req): Json<ImageRequest>) -> Response {
    offload(req, |_, frame| {
        StubBackend
            .infer_persona_raw(&frame)
            .map(|body| Json(InferenceResponse { body }))
            .map_err(backend_err)
    })
    .await
}

async fn detection(Json(req): Json<ImageRequest>) -> Response {
    offload(req, |req, frame| {
        let query = req.query.unwrap_or_default();
        let boxes = StubBackend.detect(&frame, &query).map_err(backend_err)?;
        Ok(Json(DetectionResponse {
            boxes: boxes.iter().map(WireBox::from).collect(),
        }))
    })
    .await
}

async fn segmentation(Json(req): Json<ImageRequest>) -> Response {
    offload(req, |req, frame| {
        let [x0, y0, x1, y1] = req.bbox.ok_or_else(|| bad(StatusCode::BAD_REQUEST, "missing box"))?;
        let bbox = DetectionBox {
            x0,
            y0,
            x1,
            y1,
            score: 1.0,
            label: "prompt".into(),
        };
        let mask = StubBackend.segment(&frame, &bbox).map_err(backend_err)?;
        Ok(png_reply(mask.bits.to_png()))
    })
    .await
}

async fn matting(Json(req): Json<ImageRequest>) -> Response {
    offload(req, |_, frame| {
        let out = StubBackend.remove_background(&frame).map_err(backend_err)?;
        Ok(png_reply(out.to_png()))
    })
    .await
}

async fn styling(Json(req): Json<ImageRequest>) -> Response {
    offload(req, |_, frame| {
        let out = StubBackend.stylize(&frame).map_err(backend_err)?;
        Ok(png_reply(out.to_png()))
    })
    .await
}
