//! Raster primitives shared across the pipeline: RGBA frames, binary masks,
//! PNG transport and content hashing.

use std::io::Cursor;

use image::{ImageFormat, RgbaImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid frame dimensions {width}x{height}")]
    ZeroSize { width: u32, height: u32 },
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("png decode failed: {0}")]
    Decode(String),
    #[error("png encode failed: {0}")]
    Encode(String),
}

/// An RGBA photo (or derived image) travelling through the pipeline.
#[derive(Clone, PartialEq, Eq)]
pub struct CapturedFrame {
    pixels: Vec<u8>,
    width: u32,
    height: u32,
    /// Milliseconds since the Unix epoch.
    pub captured_at: u64,
    pub source_id: String,
}

impl std::fmt::Debug for CapturedFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CapturedFrame")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("captured_at", &self.captured_at)
            .field("source_id", &self.source_id)
            .finish_non_exhaustive()
    }
}

impl CapturedFrame {
    pub fn new(
        width: u32,
        height: u32,
        pixels: Vec<u8>,
        captured_at: u64,
        source_id: impl Into<String>,
    ) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::ZeroSize { width, height });
        }
        let expected = 4 * width as usize * height as usize;
        if pixels.len() != expected {
            return Err(RasterError::BufferLength {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            pixels,
            width,
            height,
            captured_at,
            source_id: source_id.into(),
        })
    }

    /// Frame filled with a single RGBA colour.
    pub fn filled(width: u32, height: u32, rgba: [u8; 4]) -> Result<Self, RasterError> {
        let n = width as usize * height as usize;
        let pixels = rgba.iter().copied().cycle().take(4 * n).collect();
        Self::new(width, height, pixels, 0, "filled")
    }

    pub fn from_image(img: RgbaImage, captured_at: u64, source_id: impl Into<String>) -> Result<Self, RasterError> {
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw(), captured_at, source_id)
    }

    pub fn to_image(&self) -> RgbaImage {
        RgbaImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("frame buffer length is validated at construction")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 4] {
        let i = 4 * (y as usize * self.width as usize + x as usize);
        [
            self.pixels[i],
            self.pixels[i + 1],
            self.pixels[i + 2],
            self.pixels[i + 3],
        ]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgba: [u8; 4]) {
        let i = 4 * (y as usize * self.width as usize + x as usize);
        self.pixels[i..i + 4].copy_from_slice(&rgba);
    }

    /// Copy of this frame with a different pixel buffer of the same size.
    pub fn with_pixels(&self, pixels: Vec<u8>) -> Result<Self, RasterError> {
        Self::new(
            self.width,
            self.height,
            pixels,
            self.captured_at,
            self.source_id.clone(),
        )
    }

    /// SHA-256 over dimensions and pixel bytes. Metadata is excluded so the
    /// hash identifies image content only.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update(&self.pixels);
        h.finalize().into()
    }

    pub fn content_hash_hex(&self) -> String {
        hex::encode(self.content_hash())
    }

    pub fn to_png(&self) -> Result<Vec<u8>, RasterError> {
        encode_png(&self.to_image())
    }

    pub fn from_png(bytes: &[u8], captured_at: u64, source_id: impl Into<String>) -> Result<Self, RasterError> {
        let img = decode_png(bytes)?;
        Self::from_image(img, captured_at, source_id)
    }

    pub fn opaque_count(&self) -> usize {
        self.pixels.chunks_exact(4).filter(|p| p[3] > 0).count()
    }
}

pub fn encode_png(img: &RgbaImage) -> Result<Vec<u8>, RasterError> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| RasterError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbaImage, RasterError> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map(|d| d.to_rgba8())
        .map_err(|e| RasterError::Decode(e.to_string()))
}

/// Row-major binary raster, one byte per cell (0 or 1).
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bitmap {
    width: u32,
    height: u32,
    bits: Vec<u8>,
}

impl std::fmt::Debug for Bitmap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Bitmap({}x{}, {} set)", self.width, self.height, self.count_ones())
    }
}

impl Bitmap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![1; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y) as u8);
            }
        }
        Self { width, height, bits }
    }

    /// Build from raw cells; any non-zero value counts as set.
    pub fn from_cells(width: u32, height: u32, cells: Vec<u8>) -> Option<Self> {
        if cells.len() != width as usize * height as usize {
            return None;
        }
        let bits = cells.into_iter().map(|c| (c != 0) as u8).collect();
        Some(Self { width, height, bits })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn cells(&self) -> &[u8] {
        &self.bits
    }

    pub(crate) fn cells_mut(&mut self) -> &mut [u8] {
        &mut self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize] != 0
    }

    /// Like [`get`](Self::get) but out-of-bounds reads as unset.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64 && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// Half-open bounding box `(x0, y0, x1, y1)` of the set cells.
    pub fn bounding_box(&self) -> Option<(u32, u32, u32, u32)> {
        let mut bb: Option<(u32, u32, u32, u32)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
        bb
    }

    /// True when every set cell of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Bitmap) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a == 0 || b != 0)
    }

    /// 8-bit transport form: 0 = background, 255 = foreground.
    pub fn to_png(&self) -> Result<Vec<u8>, RasterError> {
        let gray = image::GrayImage::from_raw(
            self.width,
            self.height,
            self.bits.iter().map(|&b| if b != 0 { 255 } else { 0 }).collect(),
        )
        .expect("bitmap length matches dimensions");
        let mut out = Cursor::new(Vec::new());
        gray.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| RasterError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    /// Decode a mask PNG; luma above 127 is foreground.
    pub fn from_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| RasterError::Decode(e.to_string()))?
            .to_luma8();
        let (w, h) = img.dimensions();
        Ok(Self {
            width: w,
            height: h,
            bits: img.into_raw().into_iter().map(|v| (v > 127) as u8).collect(),
        })
    }
}

/// 2D summed-area table over a bitmap for O(1) rectangle popcounts.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    stride: usize,
    sums: Vec<u32>,
}

impl IntegralImage {
    pub fn new(bits: &Bitmap) -> Self {
        let (w, h) = (bits.width() as usize, bits.height() as usize);
        let stride = w + 1;
        let mut sums = vec![0u32; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += bits.cells()[y * w + x] as u32;
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { stride, sums }
    }

    /// Number of set cells in the half-open rectangle `[x, x+w) × [y, y+h)`.
    /// The rectangle must lie within the bitmap.
    #[inline]
    pub fn rect_sum(&self, x: u32, y: u32, w: u32, h: u32) -> u32 {
        let (x0, y0) = (x as usize, y as usize);
        let (x1, y1) = (x0 + w as usize, y0 + h as usize);
        let s = &self.sums;
        let st = self.stride;
        s[y1 * st + x1] + s[y0 * st + x0] - s[y0 * st + x1] - s[y1 * st + x0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_rejects_bad_buffers() {
        assert!(CapturedFrame::new(0, 4, vec![], 0, "t").is_err());
        assert!(CapturedFrame::new(2, 2, vec![0; 15], 0, "t").is_err());
        assert!(CapturedFrame::new(2, 2, vec![0; 16], 0, "t").is_ok());
    }

    #[test]
    fn hash_ignores_metadata() {
        let a = CapturedFrame::new(1, 1, vec![1, 2, 3, 4], 10, "a").unwrap();
        let b = CapturedFrame::new(1, 1, vec![1, 2, 3, 4], 99, "b").unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn mask_png_round_trip() {
        let m = Bitmap::from_fn(7, 5, |x, y| (x + y) % 3 == 0);
        let back = Bitmap::from_png(&m.to_png().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn integral_matches_brute_force() {
        let m = Bitmap::from_fn(9, 6, |x, y| (x * 7 + y * 3) % 5 < 2);
        let ii = IntegralImage::new(&m);
        for y in 0..6 {
            for x in 0..9 {
                for h in 0..=(6 - y) {
                    for w in 0..=(9 - x) {
                        let mut c = 0;
                        for yy in y..y + h {
                            for xx in x..x + w {
                                c += m.get(xx, yy) as u32;
                            }
                        }
                        assert_eq!(ii.rect_sum(x, y, w, h), c);
                    }
                }
            }
        }
    }
}
