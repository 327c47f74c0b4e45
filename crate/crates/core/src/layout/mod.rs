//! Common-scale item layout inside an admissible region.
//!
//! All items share one px-per-cm scale so their relative physical sizes are
//! preserved. The engine brackets the scale upward from 1 px/cm, then
//! bisects until the bracket is within `scale_tolerance`, testing each
//! candidate scale with the placement search in [`search`]. Items that
//! cannot fit even at 1 px/cm are dropped, lowest priority first. Every
//! returned plan is re-checked by [`verify_plan`].

mod search;
mod verify;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::geometry::AdmissibleRegion;
use crate::raster::IntegralImage;

pub use search::{candidate_stride, SearchStats};
pub use verify::{verify_plan, verify_plan_detailed};

pub const DEFAULT_SCALE_TOLERANCE: f64 = 0.01;
pub const MIN_SCALE_PX_PER_CM: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("invalid layout request: {0}")]
    InvalidRequest(String),
    #[error("region cannot host the highest-priority item at 1 px/cm")]
    Infeasible,
    #[error("layout failed independent verification: {0}")]
    VerificationFailed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutItem {
    pub item_id: String,
    pub nominal_w_cm: f64,
    pub nominal_h_cm: f64,
    pub priority: u32,
}

#[derive(Debug, Clone)]
pub struct LayoutRequest {
    pub region: AdmissibleRegion,
    pub items: Vec<LayoutItem>,
    pub seed: u64,
    pub scale_tolerance: f64,
    pub max_scale_px_per_cm: f64,
}

impl LayoutRequest {
    pub fn new(region: AdmissibleRegion, items: Vec<LayoutItem>, seed: u64, max_scale_px_per_cm: f64) -> Self {
        Self {
            region,
            items,
            seed,
            scale_tolerance: DEFAULT_SCALE_TOLERANCE,
            max_scale_px_per_cm,
        }
    }

    fn validate(&self) -> Result<(), LayoutError> {
        let bad = |m: String| Err(LayoutError::InvalidRequest(m));
        if self.items.is_empty() {
            return bad("no items".into());
        }
        if !(self.scale_tolerance > 0.0 && self.scale_tolerance < 1.0) {
            return bad(format!("scale_tolerance {} outside (0, 1)", self.scale_tolerance));
        }
        if !(self.max_scale_px_per_cm >= MIN_SCALE_PX_PER_CM && self.max_scale_px_per_cm.is_finite()) {
            return bad(format!("max_scale_px_per_cm {} below 1", self.max_scale_px_per_cm));
        }
        for (i, it) in self.items.iter().enumerate() {
            if !(it.nominal_w_cm > 0.0 && it.nominal_h_cm > 0.0 && it.nominal_w_cm.is_finite() && it.nominal_h_cm.is_finite()) {
                return bad(format!("item `{}` has non-positive size", it.item_id));
            }
            if self.items[..i].iter().any(|o| o.item_id == it.item_id) {
                return bad(format!("item `{}` listed twice", it.item_id));
            }
        }
        Ok(())
    }
}

/// Integer pixel rectangle, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn intersects(&self, o: &PixelRect) -> bool {
        self.x < o.right() && o.x < self.right() && self.y < o.bottom() && o.y < self.bottom()
    }

    pub fn contains_point(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutPlacement {
    pub item_id: String,
    pub rect: PixelRect,
    /// Draw order, 0 first (larger items behind).
    pub z: i32,
    pub nominal_cm: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutPlan {
    pub scale_px_per_cm: f64,
    pub placements: Vec<LayoutPlacement>,
    pub dropped: Vec<String>,
    pub region_area_px: u64,
    /// Coordinate space of the rects (the source frame).
    pub frame_w: u32,
    pub frame_h: u32,
}

impl LayoutPlan {
    /// Plan with nothing placed, e.g. when no bag was found.
    pub fn empty(frame_w: u32, frame_h: u32, dropped: Vec<String>) -> Self {
        Self {
            scale_px_per_cm: 0.0,
            placements: Vec::new(),
            dropped,
            region_area_px: 0,
            frame_w,
            frame_h,
        }
    }

    pub fn placement(&self, id: &str) -> Option<&LayoutPlacement> {
        self.placements.iter().find(|p| p.item_id == id)
    }
}

/// Pixel extent of `nominal_cm` at `scale`, rounding halves up.
pub fn scaled_px(scale: f64, nominal_cm: f64) -> u32 {
    (scale * nominal_cm + 0.5).floor().max(0.0) as u32
}

pub(crate) struct Sized<'a> {
    pub item: &'a LayoutItem,
    pub w: u32,
    pub h: u32,
}

/// Items at `scale`, in placement order: area descending, then priority,
/// then id.
pub(crate) fn sized_items(items: &[LayoutItem], scale: f64) -> Vec<Sized<'_>> {
    let mut v: Vec<Sized> = items
        .iter()
        .map(|item| Sized {
            item,
            w: scaled_px(scale, item.nominal_w_cm),
            h: scaled_px(scale, item.nominal_h_cm),
        })
        .collect();
    v.sort_by(|a, b| {
        (b.w as u64 * b.h as u64)
            .cmp(&(a.w as u64 * a.h as u64))
            .then(a.item.priority.cmp(&b.item.priority))
            .then(a.item.item_id.cmp(&b.item.item_id))
    });
    v
}

pub fn compute_layout(req: &LayoutRequest) -> Result<LayoutPlan, LayoutError> {
    compute_layout_with(req, Exec::default())
}

pub fn compute_layout_with(req: &LayoutRequest, exec: Exec) -> Result<LayoutPlan, LayoutError> {
    compute_layout_traced(req, exec).map(|(plan, _)| plan)
}

/// Like [`compute_layout_with`], also returning search statistics.
pub fn compute_layout_traced(req: &LayoutRequest, exec: Exec) -> Result<(LayoutPlan, SearchStats), LayoutError> {
    req.validate()?;
    let region = &req.region;
    let integral = IntegralImage::new(&region.bits);
    let ctx = search::Context::new(region, &integral, req.seed, exec);
    let mut stats = SearchStats::default();

    // highest priority first; the tail is dropped first
    let mut active: Vec<LayoutItem> = req.items.clone();
    active.sort_by(|a, b| a.priority.cmp(&b.priority).then(a.item_id.cmp(&b.item_id)));
    let mut dropped = Vec::new();

    let mut best = loop {
        if let Some(rects) = ctx.place(&active, MIN_SCALE_PX_PER_CM, &mut stats) {
            break (MIN_SCALE_PX_PER_CM, rects);
        }
        if active.len() == 1 {
            return Err(LayoutError::Infeasible);
        }
        let gone = active.pop().expect("non-empty");
        dropped.push(gone.item_id);
    };

    let cap = req.max_scale_px_per_cm;
    let mut hi: Option<f64> = None;
    while best.0 < cap {
        let s = (best.0 * 2.0).min(cap);
        match ctx.place(&active, s, &mut stats) {
            Some(rects) => best = (s, rects),
            None => {
                hi = Some(s);
                break;
            }
        }
    }
    if let Some(mut hi) = hi {
        while (hi - best.0) / best.0 > req.scale_tolerance {
            let mid = 0.5 * (best.0 + hi);
            match ctx.place(&active, mid, &mut stats) {
                Some(rects) => best = (mid, rects),
                None => hi = mid,
            }
        }
    }

    let (mut scale, mut rects) = best;
    // report a whole px/cm when it yields the same pixel sizes
    let whole = scale.floor();
    if whole >= MIN_SCALE_PX_PER_CM
        && active.iter().all(|it| {
            scaled_px(whole, it.nominal_w_cm) == scaled_px(scale, it.nominal_w_cm)
                && scaled_px(whole, it.nominal_h_cm) == scaled_px(scale, it.nominal_h_cm)
        })
    {
        scale = whole;
    }
    ctx.center_on_peak(&mut rects);

    let sized = sized_items(&active, scale);
    let placements = sized
        .iter()
        .zip(&rects)
        .enumerate()
        .map(|(z, (s, r))| LayoutPlacement {
            item_id: s.item.item_id.clone(),
            rect: *r,
            z: z as i32,
            nominal_cm: (s.item.nominal_w_cm, s.item.nominal_h_cm),
        })
        .collect();
    let plan = LayoutPlan {
        scale_px_per_cm: scale,
        placements,
        dropped,
        region_area_px: region.area_px,
        frame_w: region.width(),
        frame_h: region.height(),
    };
    verify_plan_detailed(&plan, region).map_err(LayoutError::VerificationFailed)?;
    Ok((plan, stats))
}
