//! Regenerate the shipped catalog and test fixtures.
//!
//! cargo run -p airays-core --example gen_fixtures -- <workspace root>

use std::fs;
use std::path::Path;

use airays_core::audit::{Codebook, OTHER_CODE};
use airays_core::backends::{ModelBackend, StubBackend};
use airays_core::catalog::{Catalog, ItemSpec, Manifest, ManifestItem};
use airays_core::clock::VirtualClock;
use airays_core::persona::parse_persona;
use airays_core::pipeline::{run_pipeline, PipelineConfig, RunStatus, RunStore};
use airays_core::raster::{encode_png, CapturedFrame};
use airays_core::synth;

const FIXTURE_CATALOG: [&str; 12] = [
    "lipstick",
    "perfume",
    "powder_compact",
    "ring_light",
    "laptop",
    "stethoscope",
    "yoga_mat",
    "salad_box",
    "switchblade",
    "saxophone",
    "wallet",
    "textbook",
];

const CODEBOOK: &[(&str, &str)] = &[
    ("yoga", "YOGA"),
    ("vegetarian", "VEGETARIANISM"),
    ("vegan", "VEGETARIANISM"),
    ("tech expert", "TECH_EXPERT"),
    ("tech savvy", "TECH_EXPERT"),
    ("jazz", "JAZZ"),
    ("compassionate", "COMPASSIONATE"),
    ("caring", "COMPASSIONATE"),
    ("detail-oriented", "DETAIL_ORIENTED"),
    ("meticulous", "DETAIL_ORIENTED"),
    ("lifelong learner", "LIFELONG_LEARNER"),
    ("fitness", "FITNESS"),
    ("gym", "FITNESS"),
    ("music", "MUSIC"),
];

fn write_catalog(dir: &Path, version: &str, items: &[ItemSpec]) {
    fs::create_dir_all(dir.join("items")).unwrap();
    let manifest = Manifest {
        version: version.into(),
        items: items
            .iter()
            .map(|i| {
                fs::write(dir.join(&i.asset_ref), encode_png(&i.asset).unwrap()).unwrap();
                ManifestItem {
                    id: i.id.clone(),
                    name: i.name.clone(),
                    category: i.category,
                    tags: i.tags.clone(),
                    asset: i.asset_ref.clone(),
                    nominal_cm: [i.nominal_w_cm, i.nominal_h_cm],
                }
            })
            .collect(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap() + "\n").unwrap();
}

fn save(path: &Path, frame: &CapturedFrame) {
    fs::write(path, frame.to_png().unwrap()).unwrap();
}

fn codes(frame: &CapturedFrame, cb: &Codebook) -> Vec<String> {
    let matted = StubBackend.remove_background(frame).unwrap();
    let p = parse_persona(&StubBackend.infer_persona_raw(&matted).unwrap()).unwrap();
    let mut out: Vec<String> = p.keywords().iter().flat_map(|k| cb.codes_for(k)).collect();
    out.sort();
    out.dedup();
    out
}

fn main() {
    let root = std::env::args().nth(1).unwrap_or_else(|| ".".into());
    let root = Path::new(&root);
    let fixtures = root.join("fixtures");
    fs::create_dir_all(&fixtures).unwrap();

    let items = synth::demo_items();
    write_catalog(&root.join("assets/catalog"), "demo-1", &items);
    let subset: Vec<ItemSpec> = items.iter().filter(|i| FIXTURE_CATALOG.contains(&i.id.as_str())).cloned().collect();
    write_catalog(&fixtures.join("catalog"), "fixture-1", &subset);

    let dup = fixtures.join("bad_dup");
    write_catalog(&dup, "dup", &subset[..2]);
    let text = fs::read_to_string(dup.join("manifest.json")).unwrap();
    let mut m: serde_json::Value = serde_json::from_str(&text).unwrap();
    let first = m["items"][0].clone();
    m["items"].as_array_mut().unwrap().push(first);
    fs::write(dup.join("manifest.json"), serde_json::to_string_pretty(&m).unwrap() + "\n").unwrap();

    let cb_json: serde_json::Map<String, serde_json::Value> =
        CODEBOOK.iter().map(|(p, c)| (p.to_string(), serde_json::Value::from(*c))).collect();
    let cb_text = serde_json::to_string_pretty(&cb_json).unwrap() + "\n";
    fs::write(fixtures.join("codebook.json"), &cb_text).unwrap();
    let cb = Codebook::parse(&cb_text).unwrap();

    // portraits for end-to-end runs
    let catalog = Catalog::from_items("demo-1", items.clone()).unwrap();
    let scratch = tempfile::tempdir().unwrap();
    let store = RunStore::new(scratch.path());
    let (mut person, mut nobag) = (None, None);
    for v in 0.. {
        let f = synth::portrait(192, 256, v);
        let rec = run_pipeline(&f, &PipelineConfig::default(), &StubBackend, &catalog, &VirtualClock::new(0), &store).unwrap();
        let has_person = !StubBackend.detect(&f, "person").unwrap().is_empty();
        if person.is_none() && rec.status == RunStatus::Ok && rec.plan.placements.len() >= 2 && has_person {
            person = Some(f);
        } else if nobag.is_none() && rec.degradations.iter().any(|d| d.starts_with("no_bag")) {
            nobag = Some(f);
        }
        if person.is_some() && nobag.is_some() {
            break;
        }
    }
    save(&fixtures.join("person.png"), person.as_ref().unwrap());
    save(&fixtures.join("nobag.png"), nobag.as_ref().unwrap());

    // 144-image corpus: yoga in 9 of 12 images of every female cell and 3 of
    // 12 of every male cell; no other code anywhere
    let (mut yoga, mut clean) = (Vec::new(), Vec::new());
    let only_other = vec![OTHER_CODE.to_string()];
    let yoga_other = vec![OTHER_CODE.to_string(), "YOGA".to_string()];
    for v in 10_000u64.. {
        if yoga.len() >= 72 && clean.len() >= 72 {
            break;
        }
        let f = synth::portrait(48, 64, v);
        let c = codes(&f, &cb);
        if c == yoga_other && yoga.len() < 72 {
            yoga.push(f);
        } else if c == only_other && clean.len() < 72 {
            clean.push(f);
        }
    }
    let corpus = fixtures.join("corpus");
    fs::create_dir_all(&corpus).unwrap();
    let mut csv = String::from("image,ethnicity,gender,occupation\n");
    let (mut yi, mut ci) = (yoga.into_iter(), clean.into_iter());
    for eth in ["black", "caucasian", "east_asian"] {
        for gender in ["male", "female"] {
            for occ in ["doctor", "none"] {
                let with_yoga = if gender == "female" { 9 } else { 3 };
                for k in 0..12 {
                    let f = if k < with_yoga { yi.next() } else { ci.next() }.unwrap();
                    let name = format!("corpus/{eth}_{gender}_{occ}_{k:02}.png");
                    save(&fixtures.join(&name), &f);
                    csv.push_str(&format!("{name},{eth},{gender},{occ}\n"));
                }
            }
        }
    }
    fs::write(fixtures.join("stub_manifest.csv"), csv).unwrap();
    println!("fixtures written under {}", root.display());
}
