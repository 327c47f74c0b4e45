//! Label rendering from the bundled 8x8 bitmap font.

use font8x8::legacy::BASIC_LEGACY;
use image::{Rgba, RgbaImage};

pub const GLYPH_PX: u32 = 8;

/// Width in pixels of `text` at integer `scale`.
pub fn text_width(text: &str, scale: u32) -> u32 {
    text.chars().count() as u32 * GLYPH_PX * scale
}

/// Longest prefix of `text` fitting in `max_w` pixels.
pub fn fit_text(text: &str, scale: u32, max_w: u32) -> String {
    let n = (max_w / (GLYPH_PX * scale.max(1))) as usize;
    text.chars().take(n).collect()
}

fn glyph(c: char) -> [u8; 8] {
    let i = c as usize;
    if (0x20..128).contains(&i) {
        BASIC_LEGACY[i]
    } else {
        BASIC_LEGACY['?' as usize]
    }
}

/// Draw `text` with its top-left at (x, y), clipped to the image.
pub fn draw_text(img: &mut RgbaImage, x: u32, y: u32, text: &str, scale: u32, color: Rgba<u8>) {
    let (w, h) = img.dimensions();
    for (k, c) in text.chars().enumerate() {
        let gx = x + k as u32 * GLYPH_PX * scale;
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..GLYPH_PX {
                if bits >> col & 1 == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let px = gx + col * scale + dx;
                        let py = y + row as u32 * scale + dy;
                        if px < w && py < h {
                            img.put_pixel(px, py, color);
                        }
                    }
                }
            }
        }
    }
}
