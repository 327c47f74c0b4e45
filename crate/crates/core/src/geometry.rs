//! Bag-mask cleanup: main component, hole filling and margin erosion.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{DetectionBox, MaskBitmap};
use crate::exec::Exec;
use crate::raster::Bitmap;

/// Default margin as a fraction of the component's bounding-box diagonal.
pub const DEFAULT_MARGIN_FRACTION: f64 = 0.02;
pub const MIN_DEFAULT_MARGIN_PX: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("mask is empty")]
    EmptyMask,
    #[error("region vanished after eroding by {margin_px} px")]
    RegionTooSmall { margin_px: u32 },
}

/// Eroded main region of a bag mask where items may be placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleRegion {
    pub bits: Bitmap,
    pub area_px: u64,
    pub bbox: DetectionBox,
    pub centroid: (f64, f64),
    pub margin_px: u32,
}

impl AdmissibleRegion {
    /// Wrap an arbitrary bitmap, taking its largest 4-connected component.
    pub fn from_bits(bits: &Bitmap, margin_px: u32) -> Result<Self, GeometryError> {
        let main = largest_component(bits);
        Self::describe(main, margin_px)
    }

    fn describe(bits: Bitmap, margin_px: u32) -> Result<Self, GeometryError> {
        let (x0, y0, x1, y1) = bits.bounding_box().ok_or(GeometryError::RegionTooSmall { margin_px })?;
        let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
        for y in y0..y1 {
            for x in x0..x1 {
                if bits.get(x, y) {
                    sx += x as u64;
                    sy += y as u64;
                    n += 1;
                }
            }
        }
        Ok(Self {
            area_px: n,
            centroid: (sx as f64 / n as f64, sy as f64 / n as f64),
            bbox: DetectionBox {
                x0,
                y0,
                x1,
                y1,
                score: 1.0,
                label: "region".into(),
            },
            bits,
            margin_px,
        })
    }

    pub fn width(&self) -> u32 {
        self.bits.width()
    }

    pub fn height(&self) -> u32 {
        self.bits.height()
    }

    /// Interior pixel farthest from the region boundary (first in row-major
    /// order on ties).
    pub fn interior_peak(&self, exec: Exec) -> (u32, u32) {
        let d2 = squared_distance_to_background(&self.bits, exec);
        let w = self.bits.width() as usize;
        let mut best = (0usize, 0u64);
        for (i, &d) in d2.iter().enumerate() {
            if d > best.1 {
                best = (i, d);
            }
        }
        ((best.0 % w) as u32, (best.0 / w) as u32)
    }
}

/// Largest 4-connected component. Ties go to the component whose first
/// pixel comes first in row-major order.
pub fn largest_component(bits: &Bitmap) -> Bitmap {
    let (w, h) = (bits.width() as usize, bits.height() as usize);
    let cells = bits.cells();
    let mut label = vec![0u32; w * h];
    let mut best: (u32, usize) = (0, 0);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if cells[start] == 0 || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0usize;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if cells[j] != 0 && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    let keep = best.0;
    Bitmap::from_cells(
        bits.width(),
        bits.height(),
        label.iter().map(|&l| (keep != 0 && l == keep) as u8).collect(),
    )
    .expect("same dimensions")
}

/// Set every background cell not 4-reachable from the frame border.
pub fn fill_holes(bits: &Bitmap) -> Bitmap {
    let (w, h) = (bits.width() as usize, bits.height() as usize);
    let cells = bits.cells();
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |i: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        if cells[i] == 0 && !outside[i] {
            outside[i] = true;
            queue.push_back(i);
        }
    };
    for x in 0..w {
        seed(x, &mut outside, &mut queue);
        seed((h - 1) * w + x, &mut outside, &mut queue);
    }
    for y in 0..h {
        seed(y * w, &mut outside, &mut queue);
        seed(y * w + w - 1, &mut outside, &mut queue);
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let neighbours = [
            (x > 0).then(|| i - 1),
            (x + 1 < w).then(|| i + 1),
            (y > 0).then(|| i - w),
            (y + 1 < h).then(|| i + w),
        ];
        for j in neighbours.into_iter().flatten() {
            seed(j, &mut outside, &mut queue);
        }
    }
    Bitmap::from_cells(bits.width(), bits.height(), outside.iter().map(|&o| !o as u8).collect())
        .expect("same dimensions")
}

const FAR: i64 = 1 << 40;

/// 1D lower envelope of parabolas (Felzenszwalb & Huttenlocher).
fn edt_1d(f: &[i64], out: &mut [i64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let sep = |q: usize, p: usize| -> f64 {
        ((f[q] + (q * q) as i64) - (f[p] + (p * p) as i64)) as f64 / (2.0 * (q as f64 - p as f64))
    };
    for q in 1..n {
        let mut s = sep(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = sep(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as i64 - v[k] as i64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from each cell to the nearest unset
/// cell, treating everything outside the frame as unset.
pub fn squared_distance_to_background(bits: &Bitmap, exec: Exec) -> Vec<u64> {
    let (w, h) = (bits.width() as usize, bits.height() as usize);
    // one ring of background padding
    let (pw, ph) = (w + 2, h + 2);
    let mut cols = vec![0i64; pw * ph]; // column-major: pw rows of length ph
    for y in 0..h {
        for x in 0..w {
            if bits.cells()[y * w + x] != 0 {
                cols[(x + 1) * ph + y + 1] = FAR;
            }
        }
    }
    exec.for_each_row(&mut cols, ph, |_, col| {
        let f = col.to_vec();
        edt_1d(&f, col);
    });
    let mut rows = vec![0i64; pw * ph];
    for x in 0..pw {
        for y in 0..ph {
            rows[y * pw + x] = cols[x * ph + y];
        }
    }
    exec.for_each_row(&mut rows, pw, |_, row| {
        let f = row.to_vec();
        edt_1d(&f, row);
    });
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            out.push(rows[(y + 1) * pw + x + 1].max(0) as u64);
        }
    }
    out
}

/// Morphological erosion by a disc of radius `r`: a cell survives iff every
/// cell within Euclidean distance `r` is set.
pub fn erode_disc(bits: &Bitmap, r: u32, exec: Exec) -> Bitmap {
    if r == 0 {
        return bits.clone();
    }
    let r2 = r as u64 * r as u64;
    let d2 = squared_distance_to_background(bits, exec);
    Bitmap::from_cells(bits.width(), bits.height(), d2.iter().map(|&d| (d > r2) as u8).collect())
        .expect("same dimensions")
}

/// Largest component with holes filled, before any erosion.
pub fn solid_main_component(bits: &Bitmap) -> Bitmap {
    fill_holes(&largest_component(bits))
}

/// 2% of the main component's bounding-box diagonal, at least 2 px.
pub fn default_margin(mask: &MaskBitmap) -> u32 {
    let main = largest_component(&mask.bits);
    match main.bounding_box() {
        Some((x0, y0, x1, y1)) => {
            let diag = (((x1 - x0) as f64).powi(2) + ((y1 - y0) as f64).powi(2)).sqrt();
            ((diag * DEFAULT_MARGIN_FRACTION).round() as u32).max(MIN_DEFAULT_MARGIN_PX)
        }
        None => MIN_DEFAULT_MARGIN_PX,
    }
}

pub fn main_region(mask: &MaskBitmap, margin_px: u32) -> Result<AdmissibleRegion, GeometryError> {
    main_region_with(mask, margin_px, Exec::default())
}

pub fn main_region_with(mask: &MaskBitmap, margin_px: u32, exec: Exec) -> Result<AdmissibleRegion, GeometryError> {
    if mask.bits.is_empty() {
        return Err(GeometryError::EmptyMask);
    }
    let solid = solid_main_component(&mask.bits);
    let eroded = erode_disc(&solid, margin_px, exec);
    let main = largest_component(&eroded);
    if main.is_empty() {
        return Err(GeometryError::RegionTooSmall { margin_px });
    }
    AdmissibleRegion::describe(main, margin_px)
}
