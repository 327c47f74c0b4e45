//! Synthetic portraits for fixtures and offline corpora: a plain backdrop
//! with a head, torso and bag drawn in variant-seeded colours.

use image::{Rgba, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{Category, ItemSpec};
use crate::raster::CapturedFrame;

pub const BACKDROP: [u8; 4] = [236, 236, 232, 255];

fn fill_ellipse(img: &mut RgbaImage, cx: f64, cy: f64, rx: f64, ry: f64, c: Rgba<u8>) {
    let (w, h) = img.dimensions();
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
            if dx * dx + dy * dy <= 1.0 {
                img.put_pixel(x, y, c);
            }
        }
    }
}

fn fill_rect(img: &mut RgbaImage, x0: u32, y0: u32, x1: u32, y1: u32, c: Rgba<u8>) {
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            img.put_pixel(x, y, c);
        }
    }
}

/// Colour at least 40 away from the backdrop on some channel, so stub
/// matting keeps it.
fn ink(rng: &mut ChaCha8Rng) -> Rgba<u8> {
    loop {
        let c = [rng.random_range(20..200u8), rng.random_range(20..200u8), rng.random_range(20..200u8)];
        if (0..3).any(|i| c[i].abs_diff(BACKDROP[i]) > 40) {
            return Rgba([c[0], c[1], c[2], 255]);
        }
    }
}

/// A `w`×`h` portrait; distinct variants give distinct bytes.
pub fn portrait(w: u32, h: u32, variant: u64) -> CapturedFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(variant);
    let mut img = RgbaImage::from_pixel(w, h, Rgba(BACKDROP));
    let (fw, fh) = (w as f64, h as f64);
    let skin = ink(&mut rng);
    let shirt = ink(&mut rng);
    let bag = ink(&mut rng);
    let sway = rng.random_range(-0.04..0.04);
    let cx = fw * (0.5 + sway);
    fill_rect(
        &mut img,
        (cx - fw * 0.22) as u32,
        (fh * 0.30) as u32,
        (cx + fw * 0.22) as u32,
        (fh * 0.97) as u32,
        shirt,
    );
    fill_ellipse(&mut img, cx, fh * 0.18, fw * 0.12, fh * 0.11, skin);
    // bag held in front of the torso
    fill_rect(
        &mut img,
        (fw * 0.28) as u32,
        (fh * 0.32) as u32,
        (fw * 0.72) as u32,
        (fh * 0.70) as u32,
        bag,
    );
    // a few noise pixels so nearby variants never collide
    for _ in 0..16 {
        let x = rng.random_range((fw * 0.3) as u32..(fw * 0.7) as u32);
        let y = rng.random_range((fh * 0.4) as u32..(fh * 0.9) as u32);
        let mut p = *img.get_pixel(x, y);
        p.0[0] = p.0[0].wrapping_add(rng.random_range(1..9));
        img.put_pixel(x, y, p);
    }
    CapturedFrame::from_image(img, 0, format!("synth-{variant}")).expect("non-empty image")
}

/// (id, name, category, tags, nominal width cm, nominal height cm)
pub const DEMO_ITEMS: &[(&str, &str, Category, &[&str], f64, f64)] = &[
    ("lipstick", "Lipstick", Category::Beauty, &["makeup", "feminine", "beauty"], 2.0, 8.0),
    ("perfume", "Perfume", Category::Beauty, &["makeup", "fragrance", "luxury"], 7.0, 10.0),
    ("powder_compact", "Powder compact", Category::Beauty, &["makeup", "beauty", "grooming"], 8.0, 8.0),
    ("ring_light", "Ring light", Category::Tech, &["makeup", "streaming", "tech"], 26.0, 26.0),
    ("laptop", "Laptop", Category::Tech, &["tech", "coding", "work", "professional", "tech expert"], 33.0, 23.0),
    ("smartphone", "Smartphone", Category::Tech, &["tech", "social media", "young adult"], 7.0, 15.0),
    ("headphones", "Headphones", Category::Music, &["music", "gaming", "tech"], 18.0, 20.0),
    ("stethoscope", "Stethoscope", Category::Profession, &["doctor", "medical", "compassionate"], 15.0, 30.0),
    ("id_badge", "ID badge", Category::Profession, &["office worker", "professional", "work"], 6.0, 9.0),
    ("textbook", "Textbook", Category::Profession, &["student", "reading", "lifelong learner"], 19.0, 25.0),
    ("yoga_mat", "Yoga mat", Category::Leisure, &["yoga", "fitness", "wellness"], 12.0, 30.0),
    ("dumbbell", "Dumbbell", Category::Leisure, &["fitness", "gym", "strength"], 25.0, 9.0),
    ("camera", "Camera", Category::Leisure, &["photography", "travel", "artist"], 13.0, 9.0),
    ("salad_box", "Salad box", Category::Food, &["vegetarian", "healthy", "wellness"], 16.0, 11.0),
    ("coffee_cup", "Coffee cup", Category::Food, &["coffee", "office worker", "busy"], 8.0, 12.0),
    ("switchblade", "Switchblade", Category::Suspicious, &["suspicious", "violent", "tough"], 3.0, 12.0),
    ("saxophone", "Saxophone", Category::Music, &["jazz", "music", "artist"], 20.0, 55.0),
    ("vinyl_record", "Vinyl record", Category::Music, &["music", "jazz", "hip hop", "collector"], 31.0, 31.0),
    ("wallet", "Wallet", Category::Other, &["money", "luxury", "affluent"], 11.0, 9.0),
    ("sunglasses", "Sunglasses", Category::Other, &["fashion", "travel", "confident"], 14.0, 5.0),
];

fn category_ink(c: Category) -> Rgba<u8> {
    let rgb = match c {
        Category::Beauty => [214, 64, 110],
        Category::Tech => [60, 110, 200],
        Category::Profession => [70, 150, 120],
        Category::Leisure => [230, 150, 40],
        Category::Food => [120, 180, 60],
        Category::Suspicious => [150, 30, 30],
        Category::Music => [140, 80, 190],
        Category::Other => [120, 120, 120],
    };
    Rgba([rgb[0], rgb[1], rgb[2], 255])
}

/// Icon with a transparent margin and an outlined body, proportioned like
/// the item's nominal size.
pub fn item_icon(category: Category, w_cm: f64, h_cm: f64, rounded: bool) -> RgbaImage {
    let k = 96.0 / w_cm.max(h_cm);
    let w = ((w_cm * k).round() as u32).max(6) + 4;
    let h = ((h_cm * k).round() as u32).max(6) + 4;
    let mut img = RgbaImage::new(w, h);
    let body = category_ink(category);
    let edge = Rgba([20, 20, 24, 255]);
    let (fw, fh) = ((w - 4) as f64, (h - 4) as f64);
    for y in 2..h - 2 {
        for x in 2..w - 2 {
            let (u, v) = ((x - 2) as f64 + 0.5, (y - 2) as f64 + 0.5);
            let inside = if rounded {
                let (dx, dy) = ((u - fw / 2.0) / (fw / 2.0), (v - fh / 2.0) / (fh / 2.0));
                dx * dx + dy * dy <= 1.0
            } else {
                true
            };
            if inside {
                let border = x == 2 || y == 2 || x == w - 3 || y == h - 3;
                img.put_pixel(x, y, if border && !rounded { edge } else { body });
            }
        }
    }
    img
}

pub fn demo_items() -> Vec<ItemSpec> {
    DEMO_ITEMS
        .iter()
        .enumerate()
        .map(|(i, &(id, name, category, tags, w, h))| ItemSpec {
            id: id.into(),
            name: name.into(),
            category,
            tags: tags.iter().map(|t| t.to_string()).collect(),
            asset_ref: format!("items/{id}.png"),
            nominal_w_cm: w,
            nominal_h_cm: h,
            asset: std::sync::Arc::new(item_icon(category, w, h, i % 3 == 2)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_differ_and_repeat() {
        let a = portrait(64, 96, 1);
        assert_eq!(a.content_hash(), portrait(64, 96, 1).content_hash());
        assert_ne!(a.content_hash(), portrait(64, 96, 2).content_hash());
        assert_eq!(a.pixel(0, 0), BACKDROP);
        assert_ne!(a.pixel(32, 60), BACKDROP);
    }

    #[test]
    fn demo_catalog_validates() {
        let cat = crate::catalog::Catalog::from_items("demo", demo_items()).unwrap();
        assert_eq!(cat.len(), 20);
        let ids: Vec<_> = cat.items_for_tags(&["makeup", "feminine"], 10).iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["lipstick", "perfume", "powder_compact", "ring_light"]);
    }
}
