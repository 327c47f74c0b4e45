//! Deterministic offline stand-ins for every capability. Each output is a
//! pure function of the input bytes, so whole pipeline runs are
//! reproducible without network access.

use serde::Serialize;

use super::{
    check_frame, check_query, finish_detections, finish_mask, finish_matting, finish_styled, BackendError,
    BackendResult, Capability, DetectionBox, MaskBitmap, ModelBackend,
};
use crate::raster::{Bitmap, CapturedFrame};

pub const STUB_DETECTION_SCORE: f64 = 0.9;

/// Per-channel tolerance for the corner-colour background key.
const MATTE_TOLERANCE: u8 = 10;

pub(crate) const IDENTITY_VOCAB: &[&str] = &[
    "young adult",
    "student",
    "office worker",
    "doctor",
    "artist",
    "parent",
    "traveler",
    "tech expert",
    "retiree",
    "professional",
];
pub(crate) const PERSONALITY_VOCAB: &[&str] = &[
    "confident",
    "introverted",
    "outgoing",
    "compassionate",
    "detail-oriented",
    "curious",
    "calm",
    "ambitious",
    "lifelong learner",
    "tough",
];
pub(crate) const INTEREST_VOCAB: &[&str] = &[
    "yoga",
    "fitness",
    "jazz",
    "hip hop",
    "gaming",
    "photography",
    "makeup",
    "cooking",
    "reading",
    "coding",
    "music",
    "fashion",
    "coffee",
    "travel",
    "vegetarian",
    "streaming",
];
pub(crate) const ECONOMIC_VOCAB: &[&str] = &[
    "middle income",
    "affluent",
    "budget-conscious",
    "luxury",
    "frugal",
    "comfortable",
];
pub(crate) const SUGGESTION_VOCAB: &[&str] = &[
    "laptop",
    "perfume",
    "notebook",
    "umbrella",
    "wallet",
    "camera",
    "book",
    "water bottle",
];

#[derive(Debug, Default, Clone, Copy)]
pub struct StubBackend;

fn selector_byte(hash: &[u8; 32], query: &str) -> Option<u8> {
    match query {
        "bag" => Some(hash[0]),
        "person" => Some(hash[1]),
        _ => None,
    }
}

/// Half-open central span covering 40% of `len`.
fn central_span(len: u32) -> (u32, u32) {
    let lo = (0.3 * len as f64).round() as u32;
    let hi = ((0.7 * len as f64).round() as u32).max(lo + 1).min(len);
    (lo.min(hi - 1), hi)
}

fn pick(hash: &[u8; 32], base: usize, max_count: u8, vocab: &[&str]) -> Vec<String> {
    let count = 1 + (hash[base] % max_count) as usize;
    let mut out: Vec<String> = Vec::with_capacity(count);
    for k in 0..count {
        let word = vocab[hash[base + 1 + k] as usize % vocab.len()];
        if !out.iter().any(|w| w == word) {
            out.push(word.to_string());
        }
    }
    out
}

#[derive(Serialize)]
struct StubPersona {
    identity: Vec<String>,
    personality: Vec<String>,
    interests: Vec<String>,
    economic: Vec<String>,
    summary: String,
    suggested_items: Vec<String>,
}

/// Body the stub inference capability returns for a frame with this
/// content hash.
pub fn stub_persona_body(hash: &[u8; 32]) -> String {
    let identity = pick(hash, 4, 3, IDENTITY_VOCAB);
    let personality = pick(hash, 9, 3, PERSONALITY_VOCAB);
    let interests = pick(hash, 14, 3, INTEREST_VOCAB);
    let economic = pick(hash, 19, 3, ECONOMIC_VOCAB);
    let suggested_items = pick(hash, 24, 2, SUGGESTION_VOCAB);
    let summary = format!(
        "A {} who seems {}, into {}, {}.",
        identity[0], personality[0], interests[0], economic[0]
    );
    serde_json::to_string(&StubPersona {
        identity,
        personality,
        interests,
        economic,
        summary,
        suggested_items,
    })
    .expect("stub persona serializes")
}

impl ModelBackend for StubBackend {
    /// Recognises only "bag" and "person". A frame whose selector byte is a
    /// multiple of 8 yields nothing; otherwise one central 40%×40% box.
    fn detect(&self, frame: &CapturedFrame, query: &str) -> BackendResult<Vec<DetectionBox>> {
        check_frame(frame)?;
        check_query(query)?;
        let q = query.trim().to_lowercase();
        let hash = frame.content_hash();
        let boxes = match selector_byte(&hash, &q) {
            Some(b) if b % 8 != 0 => {
                let (x0, x1) = central_span(frame.width());
                let (y0, y1) = central_span(frame.height());
                vec![DetectionBox {
                    x0,
                    y0,
                    x1,
                    y1,
                    score: STUB_DETECTION_SCORE,
                    label: q,
                }]
            }
            _ => Vec::new(),
        };
        finish_detections(frame, boxes)
    }

    /// Mask is exactly the box interior.
    fn segment(&self, frame: &CapturedFrame, bbox: &DetectionBox) -> BackendResult<MaskBitmap> {
        check_frame(frame)?;
        bbox.check(frame.width(), frame.height())
            .map_err(BackendError::InvalidInput)?;
        let bits = Bitmap::from_fn(frame.width(), frame.height(), |x, y| {
            x >= bbox.x0 && x < bbox.x1 && y >= bbox.y0 && y < bbox.y1
        });
        finish_mask(frame, bbox, bits)
    }

    /// Pixels within 10/channel (RGB) of the top-left colour become
    /// transparent.
    fn remove_background(&self, frame: &CapturedFrame) -> BackendResult<CapturedFrame> {
        check_frame(frame)?;
        let key = frame.pixel(0, 0);
        let mut px = frame.pixels().to_vec();
        for p in px.chunks_exact_mut(4) {
            if (0..3).all(|c| p[c].abs_diff(key[c]) <= MATTE_TOLERANCE) {
                p[3] = 0;
            }
        }
        let out = frame.with_pixels(px).expect("same dimensions");
        finish_matting(frame, out)
    }

    fn infer_persona_raw(&self, frame: &CapturedFrame) -> BackendResult<String> {
        check_frame(frame)?;
        Ok(stub_persona_body(&frame.content_hash()))
    }

    /// RGB inverted, alpha preserved.
    fn stylize(&self, frame: &CapturedFrame) -> BackendResult<CapturedFrame> {
        check_frame(frame)?;
        let mut px = frame.pixels().to_vec();
        for p in px.chunks_exact_mut(4) {
            p[0] = 255 - p[0];
            p[1] = 255 - p[1];
            p[2] = 255 - p[2];
        }
        let out = frame.with_pixels(px).expect("same dimensions");
        finish_styled(frame, out)
    }

    fn probe(&self, _capability: Capability) -> bool {
        true
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32, salt: u8) -> CapturedFrame {
        let mut px = Vec::with_capacity((4 * w * h) as usize);
        for y in 0..h {
            for x in 0..w {
                px.extend_from_slice(&[(x * 3) as u8 ^ salt, (y * 5) as u8, salt, 255]);
            }
        }
        CapturedFrame::new(w, h, px, 0, "g").unwrap()
    }

    /// First salt whose hash gives the requested detection outcome.
    fn frame_with(query_byte: usize, wants_box: bool) -> CapturedFrame {
        (0u8..=255)
            .map(|s| gradient(50, 40, s))
            .find(|f| (f.content_hash()[query_byte] % 8 != 0) == wants_box)
            .unwrap()
    }

    #[test]
    fn bag_box_is_central_forty_percent() {
        let f = frame_with(0, true);
        let boxes = StubBackend.detect(&f, "bag").unwrap();
        assert_eq!(boxes.len(), 1);
        let b = &boxes[0];
        assert_eq!((b.x0, b.x1, b.y0, b.y1), (15, 35, 12, 28));
        assert_eq!(b.score, 0.9);
        assert_eq!(b.label, "bag");
    }

    #[test]
    fn selector_multiple_of_eight_detects_nothing() {
        let f = frame_with(0, false);
        assert!(StubBackend.detect(&f, "bag").unwrap().is_empty());
    }

    #[test]
    fn unknown_query_is_empty_and_blank_query_rejected() {
        let f = gradient(20, 20, 1);
        assert!(StubBackend.detect(&f, "unicorn").unwrap().is_empty());
        assert!(matches!(StubBackend.detect(&f, "  "), Err(BackendError::InvalidInput(_))));
    }

    #[test]
    fn segment_popcount_equals_box_area() {
        let f = gradient(64, 48, 3);
        let b = DetectionBox { x0: 5, y0: 7, x1: 30, y1: 19, score: 0.5, label: "bag".into() };
        let m = StubBackend.segment(&f, &b).unwrap();
        assert_eq!(m.bits.count_ones() as u64, b.area());
        assert_eq!((m.width(), m.height()), (64, 48));
    }

    #[test]
    fn matting_keeps_red_square_on_blue() {
        let mut f = CapturedFrame::filled(100, 100, [0, 0, 255, 255]).unwrap();
        for y in 40..60 {
            for x in 30..50 {
                f.set_pixel(x, y, [255, 0, 0, 255]);
            }
        }
        let out = StubBackend.remove_background(&f).unwrap();
        assert_eq!(out.opaque_count(), 400);
        assert_eq!(f.opaque_count(), 10_000, "input untouched");
    }

    #[test]
    fn matting_uniform_frame_is_empty_foreground() {
        let f = CapturedFrame::filled(10, 10, [9, 9, 9, 255]).unwrap();
        assert_eq!(StubBackend.remove_background(&f), Err(BackendError::EmptyForeground));
    }

    #[test]
    fn stylize_inverts_and_keeps_dims() {
        let f = gradient(512, 768, 7);
        let s = StubBackend.stylize(&f).unwrap();
        assert_eq!((s.width(), s.height()), (512, 768));
        let (a, b) = (f.pixel(3, 4), s.pixel(3, 4));
        assert_eq!([255 - a[0], 255 - a[1], 255 - a[2], a[3]], b);
    }

    #[test]
    fn persona_body_is_stable_json() {
        let f = gradient(30, 30, 9);
        let a = StubBackend.infer_persona_raw(&f).unwrap();
        let b = StubBackend.infer_persona_raw(&f).unwrap();
        assert_eq!(a, b);
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        for key in ["identity", "personality", "interests", "economic", "suggested_items"] {
            let n = v[key].as_array().unwrap().len();
            assert!((1..=3).contains(&n), "{key} has {n}");
        }
    }
}
