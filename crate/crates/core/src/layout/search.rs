//! Placement tester for one candidate scale.
//!
//! Three passes, stopping at the first that places every item:
//! 1. row-major greedy scan with stride `max(1, floor(s/2))` and a seeded
//!    rotation of the scan start per item;
//! 2. the same greedy at stride 1;
//! 3. bounded depth-first backtracking over in-region positions.
//!
//! Pass 1 alone decides most scales; the later passes recover packings the
//! greedy misses (e.g. a rotated start that strands the second item).

use crate::exec::Exec;
use crate::geometry::AdmissibleRegion;
use crate::raster::IntegralImage;

use super::{sized_items, LayoutItem, PixelRect};

/// Backtracking uses stride 1 when the region's bounding box is at most this
/// many pixels.
const FINE_DFS_MAX_AREA: u64 = 4096;
const FINE_DFS_BUDGET: u64 = 4_000_000;
const COARSE_DFS_BUDGET: u64 = 250_000;

/// Counters for benches and diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub scales_tested: u32,
    pub greedy_hits: u32,
    pub fine_greedy_hits: u32,
    pub backtrack_hits: u32,
    pub backtrack_checks: u64,
}

pub fn candidate_stride(scale: f64) -> u32 {
    ((scale / 2.0).floor() as u32).max(1)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Candidate top-left corners for a `w`×`h` rect, row-major.
struct Grid {
    x0: u32,
    y0: u32,
    cols: u32,
    rows: u32,
    stride: u32,
}

impl Grid {
    fn len(&self) -> usize {
        self.cols as usize * self.rows as usize
    }

    fn at(&self, i: usize) -> (u32, u32) {
        let c = (i % self.cols as usize) as u32;
        let r = (i / self.cols as usize) as u32;
        (self.x0 + c * self.stride, self.y0 + r * self.stride)
    }
}

pub(crate) struct Context<'a> {
    region: &'a AdmissibleRegion,
    integral: &'a IntegralImage,
    seed: u64,
    exec: Exec,
}

impl<'a> Context<'a> {
    pub fn new(region: &'a AdmissibleRegion, integral: &'a IntegralImage, seed: u64, exec: Exec) -> Self {
        Self {
            region,
            integral,
            seed,
            exec,
        }
    }

    fn grid(&self, w: u32, h: u32, stride: u32) -> Option<Grid> {
        let b = &self.region.bbox;
        if w == 0 || h == 0 || w > b.width() || h > b.height() {
            return None;
        }
        Some(Grid {
            x0: b.x0,
            y0: b.y0,
            cols: (b.width() - w) / stride + 1,
            rows: (b.height() - h) / stride + 1,
            stride,
        })
    }

    fn inside(&self, r: &PixelRect) -> bool {
        r.right() <= self.region.width()
            && r.bottom() <= self.region.height()
            && self.integral.rect_sum(r.x, r.y, r.w, r.h) as u64 == r.area()
    }

    /// Rects in placement order (see `sized_items`), or `None` if the tester
    /// rejects `scale`.
    pub fn place(&self, items: &[LayoutItem], scale: f64, stats: &mut SearchStats) -> Option<Vec<PixelRect>> {
        stats.scales_tested += 1;
        let dims: Vec<(u32, u32)> = sized_items(items, scale).iter().map(|s| (s.w, s.h)).collect();
        if dims.iter().any(|&(w, h)| w == 0 || h == 0) {
            return None;
        }
        let total: u64 = dims.iter().map(|&(w, h)| w as u64 * h as u64).sum();
        if total > self.region.area_px {
            return None;
        }
        if let Some(r) = self.greedy(&dims, candidate_stride(scale)) {
            stats.greedy_hits += 1;
            return Some(r);
        }
        if candidate_stride(scale) > 1 {
            if let Some(r) = self.greedy(&dims, 1) {
                stats.fine_greedy_hits += 1;
                return Some(r);
            }
        }
        let b = &self.region.bbox;
        let (stride, budget) = if b.area() <= FINE_DFS_MAX_AREA {
            (1, FINE_DFS_BUDGET)
        } else {
            (candidate_stride(scale), COARSE_DFS_BUDGET)
        };
        let r = self.backtrack(&dims, stride, budget, stats);
        if r.is_some() {
            stats.backtrack_hits += 1;
        }
        r
    }

    fn greedy(&self, dims: &[(u32, u32)], stride: u32) -> Option<Vec<PixelRect>> {
        let mut placed: Vec<PixelRect> = Vec::with_capacity(dims.len());
        for (rank, &(w, h)) in dims.iter().enumerate() {
            let grid = self.grid(w, h, stride)?;
            let n = grid.len();
            let start = (splitmix64(self.seed ^ splitmix64(rank as u64)) % n as u64) as usize;
            let fits = |i: usize| {
                let (x, y) = grid.at((start + i) % n);
                let r = PixelRect { x, y, w, h };
                self.inside(&r) && placed.iter().all(|p| !p.intersects(&r))
            };
            let i = self.exec.find_first(n, fits)?;
            let (x, y) = grid.at((start + i) % n);
            placed.push(PixelRect { x, y, w, h });
        }
        Some(placed)
    }

    fn backtrack(&self, dims: &[(u32, u32)], stride: u32, budget: u64, stats: &mut SearchStats) -> Option<Vec<PixelRect>> {
        let mut cands: Vec<Vec<PixelRect>> = Vec::with_capacity(dims.len());
        for &(w, h) in dims {
            let grid = self.grid(w, h, stride)?;
            let list: Vec<PixelRect> = (0..grid.len())
                .map(|i| {
                    let (x, y) = grid.at(i);
                    PixelRect { x, y, w, h }
                })
                .filter(|r| self.inside(r))
                .collect();
            if list.is_empty() {
                return None;
            }
            cands.push(list);
        }
        let mut search = Backtrack {
            dims,
            cands: &cands,
            chosen: Vec::with_capacity(dims.len()),
            checks: 0,
            budget,
        };
        let found = search.descend(0);
        stats.backtrack_checks += search.checks;
        found.then(|| search.chosen.iter().enumerate().map(|(k, &i)| cands[k][i]).collect())
    }

    /// Translate the whole group toward the interior distance-transform
    /// peak, halving the shift until the group stays inside the region.
    pub fn center_on_peak(&self, rects: &mut [PixelRect]) {
        if rects.is_empty() {
            return;
        }
        let x0 = rects.iter().map(|r| r.x).min().unwrap_or(0) as i64;
        let y0 = rects.iter().map(|r| r.y).min().unwrap_or(0) as i64;
        let x1 = rects.iter().map(|r| r.right()).max().unwrap_or(0) as i64;
        let y1 = rects.iter().map(|r| r.bottom()).max().unwrap_or(0) as i64;
        let (px, py) = self.region.interior_peak(self.exec);
        let mut dx = px as i64 - (x0 + (x1 - x0) / 2);
        let mut dy = py as i64 - (y0 + (y1 - y0) / 2);
        while dx != 0 || dy != 0 {
            let moved: Option<Vec<PixelRect>> = rects
                .iter()
                .map(|r| {
                    let x = r.x as i64 + dx;
                    let y = r.y as i64 + dy;
                    (x >= 0 && y >= 0)
                        .then_some(PixelRect { x: x as u32, y: y as u32, w: r.w, h: r.h })
                        .filter(|m| self.inside(m))
                })
                .collect();
            if let Some(m) = moved {
                rects.copy_from_slice(&m);
                return;
            }
            dx /= 2;
            dy /= 2;
        }
    }
}

struct Backtrack<'a> {
    dims: &'a [(u32, u32)],
    cands: &'a [Vec<PixelRect>],
    chosen: Vec<usize>,
    checks: u64,
    budget: u64,
}

impl Backtrack<'_> {
    fn descend(&mut self, k: usize) -> bool {
        if k == self.cands.len() {
            return true;
        }
        // identical items are interchangeable: keep their indices increasing
        let from = if k > 0 && self.dims[k] == self.dims[k - 1] {
            self.chosen[k - 1] + 1
        } else {
            0
        };
        for i in from..self.cands[k].len() {
            if self.checks >= self.budget {
                return false;
            }
            self.checks += 1;
            let r = &self.cands[k][i];
            let free = self
                .chosen
                .iter()
                .enumerate()
                .all(|(j, &c)| !self.cands[j][c].intersects(r));
            if !free {
                continue;
            }
            self.chosen.push(i);
            if self.descend(k + 1) {
                return true;
            }
            self.chosen.pop();
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_follows_scale() {
        assert_eq!(candidate_stride(1.0), 1);
        assert_eq!(candidate_stride(3.9), 1);
        assert_eq!(candidate_stride(8.0), 4);
    }

    #[test]
    fn splitmix_is_stable() {
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
    }
}
