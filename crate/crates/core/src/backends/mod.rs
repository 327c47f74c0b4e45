//! Adapters over the five external model capabilities.
//!
//! Each capability has a remote HTTP implementation and a deterministic
//! offline stub. [`BackendSet`] routes every call to the mode configured for
//! its capability. All adapters enforce the same output contracts (sorting,
//! dimensions, non-emptiness) before returning.

mod remote;
mod stub;
pub mod wire;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Bitmap, CapturedFrame};

pub use remote::RemoteBackend;
pub use stub::{stub_persona_body, StubBackend, STUB_DETECTION_SCORE};

/// Env var naming a JSON file with endpoint overrides.
pub const BACKENDS_ENV: &str = "AIRAYS_BACKENDS";

/// Styled outputs larger than this on either side are rejected.
pub const MAX_STYLED_DIM: u32 = 8192;

/// Segmentation bits may spill this far outside the prompt box.
pub const MASK_BOX_TOLERANCE_PX: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Inference,
    Detection,
    Segmentation,
    Matting,
    Styling,
}

impl Capability {
    pub const ALL: [Capability; 5] = [
        Capability::Inference,
        Capability::Detection,
        Capability::Segmentation,
        Capability::Matting,
        Capability::Styling,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Capability::Inference => "inference",
            Capability::Detection => "detection",
            Capability::Segmentation => "segmentation",
            Capability::Matting => "matting",
            Capability::Styling => "styling",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Remote,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendEndpointConfig {
    pub capability: Capability,
    #[serde(default)]
    pub base_url: String,
    #[serde(default = "default_timeout_ms", deserialize_with = "de_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries", deserialize_with = "de_retries")]
    pub retries: u32,
    pub mode: BackendMode,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    2
}

// range checks run on the field so parse errors point at the value
fn de_timeout_ms<'de, D: serde::Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
    let v = u64::deserialize(d)?;
    if v < 100 {
        return Err(serde::de::Error::custom(format!("timeout_ms must be >= 100, got {v}")));
    }
    Ok(v)
}

fn de_retries<'de, D: serde::Deserializer<'de>>(d: D) -> Result<u32, D::Error> {
    let v = u32::deserialize(d)?;
    if v > 5 {
        return Err(serde::de::Error::custom(format!("retries must be <= 5, got {v}")));
    }
    Ok(v)
}

impl BackendEndpointConfig {
    pub fn stub(capability: Capability) -> Self {
        Self {
            capability,
            base_url: String::new(),
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            mode: BackendMode::Stub,
        }
    }

    pub fn remote(capability: Capability, base_url: impl Into<String>, timeout_ms: u64, retries: u32) -> Self {
        Self {
            capability,
            base_url: base_url.into(),
            timeout_ms,
            retries,
            mode: BackendMode::Remote,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_ms < 100 {
            return Err(format!("{}: timeout_ms must be >= 100, got {}", self.capability, self.timeout_ms));
        }
        if self.retries > 5 {
            return Err(format!("{}: retries must be <= 5, got {}", self.capability, self.retries));
        }
        if self.mode == BackendMode::Remote && !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(format!("{}: remote mode needs an http(s) base_url", self.capability));
        }
        Ok(())
    }
}

/// Axis-aligned detection in pixel coordinates, half-open on the max side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    pub score: f64,
    pub label: String,
}

impl DetectionBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn check(&self, frame_w: u32, frame_h: u32) -> Result<(), String> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(format!("degenerate box {:?}", [self.x0, self.y0, self.x1, self.y1]));
        }
        if self.x1 > frame_w || self.y1 > frame_h {
            return Err(format!(
                "box {:?} outside {frame_w}x{frame_h} frame",
                [self.x0, self.y0, self.x1, self.y1]
            ));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0,1]", self.score));
        }
        Ok(())
    }
}

/// Segmentation output: frame-sized binary raster plus the prompt box.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskBitmap {
    pub bits: Bitmap,
    pub provenance_box: DetectionBox,
}

impl MaskBitmap {
    pub fn width(&self) -> u32 {
        self.bits.width()
    }

    pub fn height(&self) -> u32 {
        self.bits.height()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("{capability} backend unavailable: {detail}")]
    Unavailable { capability: Capability, detail: String },
    #[error("{capability} backend protocol error: {detail}")]
    Protocol { capability: Capability, detail: String },
    #[error("segmentation produced an empty mask")]
    EmptyMask,
    #[error("background removal left no foreground")]
    EmptyForeground,
    #[error("invalid request: {0}")]
    InvalidInput(String),
}

impl BackendError {
    pub(crate) fn protocol(capability: Capability, detail: impl Into<String>) -> Self {
        BackendError::Protocol {
            capability,
            detail: detail.into(),
        }
    }
}

pub type BackendResult<T> = Result<T, BackendError>;

/// The five model capabilities behind one interface.
pub trait ModelBackend: Send + Sync {
    fn detect(&self, frame: &CapturedFrame, query: &str) -> BackendResult<Vec<DetectionBox>>;
    fn segment(&self, frame: &CapturedFrame, bbox: &DetectionBox) -> BackendResult<MaskBitmap>;
    fn remove_background(&self, frame: &CapturedFrame) -> BackendResult<CapturedFrame>;
    fn infer_persona_raw(&self, frame: &CapturedFrame) -> BackendResult<String>;
    fn stylize(&self, frame: &CapturedFrame) -> BackendResult<CapturedFrame>;

    /// Reachability probe used by health reporting.
    fn probe(&self, capability: Capability) -> bool;

    /// True when every capability is served by a deterministic stub.
    fn is_deterministic(&self) -> bool {
        false
    }
}

// ---- output contracts shared by every adapter ----

pub(crate) fn check_query(query: &str) -> BackendResult<()> {
    if query.trim().is_empty() {
        return Err(BackendError::InvalidInput("detection query is empty".into()));
    }
    Ok(())
}

pub(crate) fn finish_detections(frame: &CapturedFrame, mut boxes: Vec<DetectionBox>) -> BackendResult<Vec<DetectionBox>> {
    for b in &boxes {
        b.check(frame.width(), frame.height())
            .map_err(|e| BackendError::protocol(Capability::Detection, e))?;
    }
    // stable: equal scores keep backend order
    boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(boxes)
}

pub(crate) fn finish_mask(frame: &CapturedFrame, bbox: &DetectionBox, mut bits: Bitmap) -> BackendResult<MaskBitmap> {
    if bits.width() != frame.width() || bits.height() != frame.height() {
        return Err(BackendError::protocol(
            Capability::Segmentation,
            format!(
                "mask is {}x{}, frame is {}x{}",
                bits.width(),
                bits.height(),
                frame.width(),
                frame.height()
            ),
        ));
    }
    let t = MASK_BOX_TOLERANCE_PX;
    let (x0, y0) = (bbox.x0.saturating_sub(t), bbox.y0.saturating_sub(t));
    let (x1, y1) = (bbox.x1 + t, bbox.y1 + t);
    let w = bits.width();
    for (i, c) in bits.cells_mut().iter_mut().enumerate() {
        let (x, y) = (i as u32 % w, i as u32 / w);
        if x < x0 || x >= x1 || y < y0 || y >= y1 {
            *c = 0;
        }
    }
    if bits.is_empty() {
        return Err(BackendError::EmptyMask);
    }
    Ok(MaskBitmap {
        bits,
        provenance_box: bbox.clone(),
    })
}

pub(crate) fn finish_matting(frame: &CapturedFrame, out: CapturedFrame) -> BackendResult<CapturedFrame> {
    if out.width() != frame.width() || out.height() != frame.height() {
        return Err(BackendError::protocol(
            Capability::Matting,
            format!(
                "matting output is {}x{}, frame is {}x{}",
                out.width(),
                out.height(),
                frame.width(),
                frame.height()
            ),
        ));
    }
    if out.opaque_count() == 0 {
        return Err(BackendError::EmptyForeground);
    }
    Ok(out)
}

pub(crate) fn finish_styled(frame: &CapturedFrame, out: CapturedFrame) -> BackendResult<CapturedFrame> {
    if out.width() > MAX_STYLED_DIM || out.height() > MAX_STYLED_DIM {
        return Err(BackendError::protocol(
            Capability::Styling,
            format!("styled image {}x{} exceeds {MAX_STYLED_DIM}px bound", out.width(), out.height()),
        ));
    }
    let want = frame.width() as f64 / frame.height() as f64;
    let got = out.width() as f64 / out.height() as f64;
    if ((got - want) / want).abs() > 0.01 {
        return Err(BackendError::protocol(
            Capability::Styling,
            format!("aspect ratio {got:.4} differs from input {want:.4} by more than 1%"),
        ));
    }
    Ok(out)
}

pub(crate) fn check_frame(frame: &CapturedFrame) -> BackendResult<()> {
    // Construction already validates; guard against zero-sized frames anyway.
    if frame.width() == 0 || frame.height() == 0 {
        return Err(BackendError::InvalidInput("empty frame".into()));
    }
    Ok(())
}

/// Routes each capability to its configured stub or remote adapter.
pub struct BackendSet {
    modes: [BackendMode; 5],
    configs: Vec<BackendEndpointConfig>,
    stub: StubBackend,
    remote: Option<RemoteBackend>,
}

impl fmt::Debug for BackendSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendSet").field("configs", &self.configs).finish()
    }
}

impl BackendSet {
    pub fn all_stub() -> Self {
        Self::from_configs(Vec::new()).expect("empty config is valid")
    }

    /// Capabilities missing from `configs` default to stub mode.
    pub fn from_configs(configs: Vec<BackendEndpointConfig>) -> Result<Self, String> {
        let mut modes = [BackendMode::Stub; 5];
        let mut seen = [false; 5];
        for c in &configs {
            c.validate()?;
            let i = c.capability.index();
            if seen[i] {
                return Err(format!("capability {} configured twice", c.capability));
            }
            seen[i] = true;
            modes[i] = c.mode;
        }
        let remote_cfgs: Vec<_> = configs.iter().filter(|c| c.mode == BackendMode::Remote).cloned().collect();
        let remote = (!remote_cfgs.is_empty()).then(|| RemoteBackend::new(remote_cfgs));
        Ok(Self {
            modes,
            configs,
            stub: StubBackend,
            remote,
        })
    }

    /// Replace entries in `configs` with those from the file named by
    /// `AIRAYS_BACKENDS`, when set.
    pub fn with_env_overrides(configs: Vec<BackendEndpointConfig>) -> Result<Self, String> {
        match std::env::var_os(BACKENDS_ENV) {
            Some(path) => {
                let overrides = load_endpoint_overrides(Path::new(&path))?;
                Self::from_configs(merge_endpoints(configs, overrides))
            }
            None => Self::from_configs(configs),
        }
    }

    pub fn mode(&self, capability: Capability) -> BackendMode {
        self.modes[capability.index()]
    }

    pub fn configs(&self) -> &[BackendEndpointConfig] {
        &self.configs
    }

    fn route(&self, capability: Capability) -> &dyn ModelBackend {
        match (self.mode(capability), &self.remote) {
            (BackendMode::Remote, Some(r)) => r,
            _ => &self.stub,
        }
    }
}

impl ModelBackend for BackendSet {
    fn detect(&self, frame: &CapturedFrame, query: &str) -> BackendResult<Vec<DetectionBox>> {
        self.route(Capability::Detection).detect(frame, query)
    }

    fn segment(&self, frame: &CapturedFrame, bbox: &DetectionBox) -> BackendResult<MaskBitmap> {
        self.route(Capability::Segmentation).segment(frame, bbox)
    }

    fn remove_background(&self, frame: &CapturedFrame) -> BackendResult<CapturedFrame> {
        self.route(Capability::Matting).remove_background(frame)
    }

    fn infer_persona_raw(&self, frame: &CapturedFrame) -> BackendResult<String> {
        self.route(Capability::Inference).infer_persona_raw(frame)
    }

    fn stylize(&self, frame: &CapturedFrame) -> BackendResult<CapturedFrame> {
        self.route(Capability::Styling).stylize(frame)
    }

    fn probe(&self, capability: Capability) -> bool {
        self.route(capability).probe(capability)
    }

    fn is_deterministic(&self) -> bool {
        self.modes.iter().all(|&m| m == BackendMode::Stub)
    }
}

pub fn load_endpoint_overrides(path: &Path) -> Result<Vec<BackendEndpointConfig>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Overrides replace base entries for the same capability.
pub fn merge_endpoints(
    base: Vec<BackendEndpointConfig>,
    overrides: Vec<BackendEndpointConfig>,
) -> Vec<BackendEndpointConfig> {
    let mut out: Vec<_> = base
        .into_iter()
        .filter(|b| overrides.iter().all(|o| o.capability != b.capability))
        .collect();
    out.extend(overrides);
    out.sort_by_key(|c| c.capability);
    out
}
