//! Plan checker written against the raw region bits, sharing no code with
//! the search.

use std::collections::BTreeSet;

use crate::geometry::AdmissibleRegion;

use super::LayoutPlan;

pub fn verify_plan(plan: &LayoutPlan, region: &AdmissibleRegion) -> bool {
    verify_plan_detailed(plan, region).is_ok()
}

/// Like [`verify_plan`] but names the first violated invariant.
pub fn verify_plan_detailed(plan: &LayoutPlan, region: &AdmissibleRegion) -> Result<(), String> {
    let (fw, fh) = (region.bits.width(), region.bits.height());
    if (plan.frame_w, plan.frame_h) != (fw, fh) {
        return Err(format!("plan frame {}x{} but region {fw}x{fh}", plan.frame_w, plan.frame_h));
    }
    let mut owner: Vec<Option<usize>> = vec![None; fw as usize * fh as usize];
    let mut ids = BTreeSet::new();
    for (k, p) in plan.placements.iter().enumerate() {
        let r = p.rect;
        if !ids.insert(p.item_id.as_str()) {
            return Err(format!("`{}` placed twice", p.item_id));
        }
        if r.w == 0 || r.h == 0 {
            return Err(format!("`{}` has an empty rect", p.item_id));
        }
        if r.x as u64 + r.w as u64 > fw as u64 || r.y as u64 + r.h as u64 > fh as u64 {
            return Err(format!("`{}` leaves the frame", p.item_id));
        }
        let (nw, nh) = p.nominal_cm;
        for (px, cm) in [(r.w, nw), (r.h, nh)] {
            if (px as f64 - plan.scale_px_per_cm * cm).abs() > 0.5 + 1e-9 {
                return Err(format!("`{}` is {px} px for {cm} cm at scale {}", p.item_id, plan.scale_px_per_cm));
            }
        }
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                if !region.bits.get(x, y) {
                    return Err(format!("`{}` covers ({x},{y}) outside the region", p.item_id));
                }
                let cell = &mut owner[y as usize * fw as usize + x as usize];
                if let Some(j) = *cell {
                    return Err(format!("`{}` overlaps `{}` at ({x},{y})", p.item_id, plan.placements[j].item_id));
                }
                *cell = Some(k);
            }
        }
    }
    if let Some(d) = plan.dropped.iter().find(|d| ids.contains(d.as_str())) {
        return Err(format!("`{d}` is both placed and dropped"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{LayoutPlacement, PixelRect};
    use crate::raster::Bitmap;

    fn plan(rects: &[(u32, u32, u32, u32)]) -> LayoutPlan {
        LayoutPlan {
            scale_px_per_cm: 4.0,
            placements: rects
                .iter()
                .enumerate()
                .map(|(i, &(x, y, w, h))| LayoutPlacement {
                    item_id: format!("i{i}"),
                    rect: PixelRect { x, y, w, h },
                    z: i as i32,
                    nominal_cm: (w as f64 / 4.0, h as f64 / 4.0),
                })
                .collect(),
            dropped: vec![],
            region_area_px: 0,
            frame_w: 20,
            frame_h: 20,
        }
    }

    fn region() -> AdmissibleRegion {
        AdmissibleRegion::from_bits(&Bitmap::from_fn(20, 20, |x, y| (2..18).contains(&x) && (2..18).contains(&y)), 0).unwrap()
    }

    #[test]
    fn accepts_disjoint_inside() {
        assert!(verify_plan(&plan(&[(2, 2, 8, 8), (10, 2, 8, 8)]), &region()));
    }

    #[test]
    fn rejects_identical_rects() {
        assert!(!verify_plan(&plan(&[(2, 2, 8, 8), (2, 2, 8, 8)]), &region()));
    }

    #[test]
    fn rejects_one_pixel_outside() {
        let ok = plan(&[(2, 2, 8, 8), (10, 2, 8, 8)]);
        assert!(verify_plan(&ok, &region()));
        let mut bad = ok.clone();
        bad.placements[1].rect.x += 1;
        assert!(!verify_plan(&bad, &region()));
        let mut bad = ok;
        bad.placements[0].rect.y -= 1;
        assert!(!verify_plan(&bad, &region()));
    }

    #[test]
    fn rejects_wrong_size_and_double_listing() {
        let mut p = plan(&[(2, 2, 8, 8)]);
        p.placements[0].nominal_cm = (1.0, 2.0);
        assert!(!verify_plan(&p, &region()));
        let mut p = plan(&[(2, 2, 8, 8)]);
        p.dropped.push("i0".into());
        assert!(!verify_plan(&p, &region()));
    }
}
