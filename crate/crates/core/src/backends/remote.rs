//! HTTP adapter: one POST per call to `{base_url}/{capability}`.

use std::thread;
use std::time::{Duration, Instant};

use super::wire::{decode_b64, encode_b64, DetectionResponse, ImageRequest, ImageResponse, InferenceResponse};
use super::{
    check_frame, check_query, finish_detections, finish_mask, finish_matting, finish_styled, BackendEndpointConfig,
    BackendError, BackendResult, Capability, DetectionBox, MaskBitmap, ModelBackend,
};
use crate::raster::{Bitmap, CapturedFrame};

const BACKOFF_START_MS: u64 = 250;
const MAX_BODY_BYTES: u64 = 256 << 20;

pub struct RemoteBackend {
    endpoints: Vec<BackendEndpointConfig>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend").field("endpoints", &self.endpoints).finish()
    }
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

impl RemoteBackend {
    pub fn new(endpoints: Vec<BackendEndpointConfig>) -> Self {
        let config = ureq::Agent::config_builder().http_status_as_error(false).build();
        Self {
            endpoints,
            agent: ureq::Agent::new_with_config(config),
        }
    }

    fn endpoint(&self, capability: Capability) -> BackendResult<&BackendEndpointConfig> {
        self.endpoints
            .iter()
            .find(|e| e.capability == capability)
            .ok_or_else(|| BackendError::Unavailable {
                capability,
                detail: "no remote endpoint configured".into(),
            })
    }

    fn url(ep: &BackendEndpointConfig, path: &str) -> String {
        format!("{}/{}", ep.base_url.trim_end_matches('/'), path)
    }

    fn attempt(&self, url: &str, payload: &str, timeout: Duration, capability: Capability) -> Result<String, Attempt> {
        let resp = self
            .agent
            .post(url)
            .config()
            .timeout_global(Some(timeout))
            .build()
            .header("content-type", "application/json")
            .send(payload);
        let mut resp = match resp {
            Ok(r) => r,
            Err(e) => return Err(Attempt::Retry(e.to_string())),
        };
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(BackendError::protocol(capability, format!("HTTP {status}"))));
        }
        resp.body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))
    }

    /// POST with retries. The whole call, backoff sleeps included, stays
    /// within `timeout_ms * (retries + 1)`.
    fn call(&self, capability: Capability, req: &ImageRequest) -> BackendResult<String> {
        let ep = self.endpoint(capability)?;
        let url = Self::url(ep, capability.as_str());
        let payload = serde_json::to_string(req).expect("request serializes");
        let per_try = Duration::from_millis(ep.timeout_ms);
        let deadline = Instant::now() + per_try * (ep.retries + 1);
        let mut last = String::from("no attempt made");
        for attempt in 0..=ep.retries {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                break;
            }
            match self.attempt(&url, &payload, per_try.min(remaining), capability) {
                Ok(body) => return Ok(body),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::debug!("{capability} attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
            if attempt < ep.retries {
                let backoff = Duration::from_millis(BACKOFF_START_MS << attempt.min(16));
                thread::sleep(backoff.min(deadline.saturating_duration_since(Instant::now())));
            }
        }
        Err(BackendError::Unavailable {
            capability,
            detail: format!("{url}: {last}"),
        })
    }

    fn image_request(frame: &CapturedFrame) -> BackendResult<ImageRequest> {
        let png = frame.to_png().map_err(|e| BackendError::InvalidInput(e.to_string()))?;
        Ok(ImageRequest {
            image: encode_b64(&png),
            query: None,
            bbox: None,
        })
    }

    fn parse<T: serde::de::DeserializeOwned>(capability: Capability, body: &str) -> BackendResult<T> {
        serde_json::from_str(body).map_err(|e| BackendError::protocol(capability, format!("bad response: {e}")))
    }

    fn decode_frame(capability: Capability, b64: &str, like: &CapturedFrame) -> BackendResult<CapturedFrame> {
        let bytes = decode_b64(b64).map_err(|e| BackendError::protocol(capability, e))?;
        CapturedFrame::from_png(&bytes, like.captured_at, like.source_id.clone())
            .map_err(|e| BackendError::protocol(capability, e.to_string()))
    }
}

impl ModelBackend for RemoteBackend {
    fn detect(&self, frame: &CapturedFrame, query: &str) -> BackendResult<Vec<DetectionBox>> {
        check_frame(frame)?;
        check_query(query)?;
        let mut req = Self::image_request(frame)?;
        req.query = Some(query.to_string());
        let body = self.call(Capability::Detection, &req)?;
        let resp: DetectionResponse = Self::parse(Capability::Detection, &body)?;
        finish_detections(frame, resp.boxes.into_iter().map(DetectionBox::from).collect())
    }

    fn segment(&self, frame: &CapturedFrame, bbox: &DetectionBox) -> BackendResult<MaskBitmap> {
        check_frame(frame)?;
        bbox.check(frame.width(), frame.height())
            .map_err(BackendError::InvalidInput)?;
        let mut req = Self::image_request(frame)?;
        req.bbox = Some([bbox.x0, bbox.y0, bbox.x1, bbox.y1]);
        let body = self.call(Capability::Segmentation, &req)?;
        let resp: ImageResponse = Self::parse(Capability::Segmentation, &body)?;
        let bytes = decode_b64(&resp.image).map_err(|e| BackendError::protocol(Capability::Segmentation, e))?;
        let bits = Bitmap::from_png(&bytes).map_err(|e| BackendError::protocol(Capability::Segmentation, e.to_string()))?;
        finish_mask(frame, bbox, bits)
    }

    fn remove_background(&self, frame: &CapturedFrame) -> BackendResult<CapturedFrame> {
        check_frame(frame)?;
        let body = self.call(Capability::Matting, &Self::image_request(frame)?)?;
        let resp: ImageResponse = Self::parse(Capability::Matting, &body)?;
        let out = Self::decode_frame(Capability::Matting, &resp.image, frame)?;
        finish_matting(frame, out)
    }

    fn infer_persona_raw(&self, frame: &CapturedFrame) -> BackendResult<String> {
        check_frame(frame)?;
        let body = self.call(Capability::Inference, &Self::image_request(frame)?)?;
        let resp: InferenceResponse = Self::parse(Capability::Inference, &body)?;
        if resp.body.trim().is_empty() {
            return Err(BackendError::protocol(Capability::Inference, "empty body"));
        }
        Ok(resp.body)
    }

    fn stylize(&self, frame: &CapturedFrame) -> BackendResult<CapturedFrame> {
        check_frame(frame)?;
        let body = self.call(Capability::Styling, &Self::image_request(frame)?)?;
        let resp: ImageResponse = Self::parse(Capability::Styling, &body)?;
        let out = Self::decode_frame(Capability::Styling, &resp.image, frame)?;
        finish_styled(frame, out)
    }

    fn probe(&self, capability: Capability) -> bool {
        let Ok(ep) = self.endpoint(capability) else {
            return false;
        };
        self.agent
            .get(Self::url(ep, "healthz"))
            .config()
            .timeout_global(Some(Duration::from_millis(ep.timeout_ms)))
            .build()
            .call()
            .map(|r| r.status().is_success())
            .unwrap_or(false)
    }
}
