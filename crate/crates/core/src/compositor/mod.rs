//! Final image: upscaled styled body, items pasted at their placements, and
//! a side panel listing every assigned item.

pub mod text;

use image::imageops::{self, FilterType};
use image::{Rgba, RgbaImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError};
use crate::exec::Exec;
use crate::layout::{LayoutPlan, PixelRect};
use crate::raster::CapturedFrame;

pub const DEFAULT_UPSCALE: f64 = 2.0;
pub const PANEL_WIDTH_FRACTION: f64 = 0.25;
pub const MIN_THUMB_PX: u32 = 48;
pub const MAX_THUMB_PX: u32 = 160;
pub const PANEL_BG: Rgba<u8> = Rgba([18, 18, 22, 255]);
pub const LABEL_COLOR: Rgba<u8> = Rgba([235, 235, 235, 255]);
const PANEL_PAD: u32 = 8;
const LABEL_GAP: u32 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompositeError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("upscale factor {0} must be finite and >= 1")]
    Upscale(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelEntry {
    pub item_id: String,
    pub name: String,
    pub thumb: PixelRect,
    pub label_anchor: (u32, u32),
}

#[derive(Debug, Clone)]
pub struct CompositeResult {
    pub image: RgbaImage,
    pub panel_meta: Vec<PanelEntry>,
    pub body_rect: PixelRect,
    pub panel_rect: PixelRect,
    /// Placement rects mapped into canvas pixels, in draw order.
    pub item_rects: Vec<(String, PixelRect)>,
}

/// Smooth separable resampling to `round(factor * dims)`.
pub fn upscale_image(img: &RgbaImage, factor: f64) -> RgbaImage {
    let w = ((img.width() as f64 * factor).round() as u32).max(1);
    let h = ((img.height() as f64 * factor).round() as u32).max(1);
    if (w, h) == img.dimensions() {
        return img.clone();
    }
    imageops::resize(img, w, h, FilterType::CatmullRom)
}

/// Map a plan rect from frame pixels to body pixels by rounding each edge.
pub fn map_rect(r: &PixelRect, sx: f64, sy: f64) -> PixelRect {
    let x0 = (r.x as f64 * sx).round() as u32;
    let y0 = (r.y as f64 * sy).round() as u32;
    let x1 = (r.right() as f64 * sx).round() as u32;
    let y1 = (r.bottom() as f64 * sy).round() as u32;
    PixelRect {
        x: x0,
        y: y0,
        w: x1 - x0,
        h: y1 - y0,
    }
}

/// Source-over with straight alpha and integer rounding. A zero-alpha source
/// leaves the destination byte-identical.
#[inline]
pub fn blend_pixel(dst: &mut [u8], src: [u8; 4]) {
    let a = src[3] as u32;
    if a == 0 {
        return;
    }
    if a == 255 {
        dst.copy_from_slice(&src);
        return;
    }
    let inv = 255 - a;
    let da = dst[3] as u32;
    let out_a = a + (da * inv + 127) / 255;
    for c in 0..3 {
        let num = src[c] as u32 * a * 255 + dst[c] as u32 * da * inv;
        dst[c] = ((num + out_a * 255 / 2) / (out_a * 255)) as u8;
    }
    dst[3] = out_a as u8;
}

/// Blend `src` onto `dst` with its top-left at (x, y), clipped.
fn blend_onto(dst: &mut RgbaImage, src: &RgbaImage, x: u32, y: u32, exec: Exec) {
    let (dw, dh) = dst.dimensions();
    if x >= dw || y >= dh {
        return;
    }
    let w = src.width().min(dw - x) as usize;
    let h = src.height().min(dh - y) as usize;
    let row_len = dw as usize * 4;
    let start = y as usize * row_len;
    let rows = &mut dst.as_mut()[start..start + h * row_len];
    let sw = src.width() as usize;
    let sbuf = src.as_raw();
    exec.for_each_row(rows, row_len, |r, row| {
        for c in 0..w {
            let s = &sbuf[(r * sw + c) * 4..][..4];
            let d = &mut row[(x as usize + c) * 4..][..4];
            blend_pixel(d, [s[0], s[1], s[2], s[3]]);
        }
    });
}

pub fn thumb_height(canvas_h: u32, n: usize) -> u32 {
    if n == 0 {
        return MIN_THUMB_PX;
    }
    (canvas_h / (2 * n as u32)).clamp(MIN_THUMB_PX, MAX_THUMB_PX)
}

pub fn composite(
    styled: &CapturedFrame,
    plan: &LayoutPlan,
    panel_items: &[String],
    catalog: &Catalog,
    upscale: f64,
) -> Result<CompositeResult, CompositeError> {
    composite_with(styled, plan, panel_items, catalog, upscale, Exec::default())
}

/// `panel_items` lists item ids in assignment priority order; placed items
/// come from `plan`.
pub fn composite_with(
    styled: &CapturedFrame,
    plan: &LayoutPlan,
    panel_items: &[String],
    catalog: &Catalog,
    upscale: f64,
    exec: Exec,
) -> Result<CompositeResult, CompositeError> {
    if !(upscale.is_finite() && upscale >= 1.0) {
        return Err(CompositeError::Upscale(upscale));
    }
    let lookup = |id: &str| {
        catalog.get(id).ok_or_else(|| CatalogError::Asset {
            id: id.to_string(),
            detail: "not in catalog".into(),
        })
    };

    let body = upscale_image(&styled.to_image(), upscale);
    let (bw, bh) = body.dimensions();
    let pw = (bw as f64 * PANEL_WIDTH_FRACTION).round() as u32;
    let mut canvas = RgbaImage::from_pixel(bw + pw, bh, PANEL_BG);
    imageops::replace(&mut canvas, &body, 0, 0);

    let (sx, sy) = if plan.frame_w > 0 && plan.frame_h > 0 {
        (bw as f64 / plan.frame_w as f64, bh as f64 / plan.frame_h as f64)
    } else {
        (upscale, upscale)
    };
    let mut order: Vec<_> = plan.placements.iter().collect();
    order.sort_by_key(|p| p.z);
    let mut item_rects = Vec::with_capacity(order.len());
    for p in order {
        let spec = lookup(&p.item_id)?;
        let r = map_rect(&p.rect, sx, sy);
        if r.w > 0 && r.h > 0 && r.right() <= bw && r.bottom() <= bh {
            let sprite = imageops::resize(spec.asset.as_ref(), r.w, r.h, FilterType::CatmullRom);
            blend_onto(&mut canvas, &sprite, r.x, r.y, exec);
        }
        item_rects.push((p.item_id.clone(), r));
    }

    let n = panel_items.len();
    let th = thumb_height(bh, n);
    let scale = if pw >= 160 { 2 } else { 1 };
    let label_h = text::GLYPH_PX * scale;
    let pad = if pw > 2 * PANEL_PAD { PANEL_PAD } else { 0 };
    let avail_w = pw.saturating_sub(2 * pad).max(1);
    let mut y = pad;
    let mut panel_meta = Vec::with_capacity(n);
    for id in panel_items {
        let spec = lookup(id)?;
        let (aw, ah) = spec.asset.dimensions();
        let k = (th as f64 / ah as f64).min(avail_w as f64 / aw as f64);
        let tw = ((aw as f64 * k).round() as u32).max(1);
        let tth = ((ah as f64 * k).round() as u32).max(1);
        // uniform slot height; the sprite is fitted and centred inside
        let thumb = PixelRect {
            x: bw + pad,
            y,
            w: avail_w,
            h: th,
        };
        if pw > 0 {
            let sprite = imageops::resize(spec.asset.as_ref(), tw, tth, FilterType::CatmullRom);
            let sx = thumb.x + (avail_w.saturating_sub(tw)) / 2;
            let sy = thumb.y + (th.saturating_sub(tth)) / 2;
            blend_onto(&mut canvas, &sprite, sx, sy, exec);
        }
        let label = text::fit_text(&spec.name, scale, avail_w);
        let anchor = (bw + pad, y + th + LABEL_GAP);
        text::draw_text(&mut canvas, anchor.0, anchor.1, &label, scale, LABEL_COLOR);
        panel_meta.push(PanelEntry {
            item_id: id.clone(),
            name: spec.name.clone(),
            thumb,
            label_anchor: anchor,
        });
        y += th + LABEL_GAP + label_h + pad.max(4);
    }

    Ok(CompositeResult {
        image: canvas,
        panel_meta,
        body_rect: PixelRect { x: 0, y: 0, w: bw, h: bh },
        panel_rect: PixelRect { x: bw, y: 0, w: pw, h: bh },
        item_rects,
    })
}
