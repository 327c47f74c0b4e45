//! JSON bodies exchanged with capability endpoints.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::DetectionBox;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRequest {
    /// Base64 PNG.
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[u32; 4]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireBox {
    #[serde(rename = "box")]
    pub bbox: [u32; 4],
    pub score: f64,
    pub label: String,
}

impl From<&DetectionBox> for WireBox {
    fn from(b: &DetectionBox) -> Self {
        WireBox {
            bbox: [b.x0, b.y0, b.x1, b.y1],
            score: b.score,
            label: b.label.clone(),
        }
    }
}

impl From<WireBox> for DetectionBox {
    fn from(w: WireBox) -> Self {
        let [x0, y0, x1, y1] = w.bbox;
        DetectionBox {
            x0,
            y0,
            x1,
            y1,
            score: w.score,
            label: w.label,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionResponse {
    pub boxes: Vec<WireBox>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageResponse {
    pub image: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceResponse {
    pub body: String,
}

pub fn encode_b64(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn decode_b64(text: &str) -> Result<Vec<u8>, String> {
    STANDARD.decode(text.trim()).map_err(|e| e.to_string())
}
