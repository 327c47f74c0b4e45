use std::collections::BTreeSet;

use airays_core::backends::{BackendResult, Capability, DetectionBox, MaskBitmap, ModelBackend, StubBackend};
use airays_core::catalog::Catalog;
use airays_core::clock::VirtualClock;
use airays_core::layout::verify_plan;
use airays_core::persona::{is_fallback, FALLBACK_RATIONALE};
use airays_core::pipeline::{run_pipeline, KeywordStage, PipelineConfig, PipelineError, RunStatus, RunStore};
use airays_core::raster::CapturedFrame;
use airays_core::synth;

fn catalog() -> Catalog {
    Catalog::from_items("demo", synth::demo_items()).unwrap()
}

/// First synthetic portrait whose bag selector byte gives the wanted
/// detection outcome once the backdrop is keyed out.
fn portrait(wants_bag: bool) -> CapturedFrame {
    (0..500)
        .map(|v| synth::portrait(96, 128, v))
        .find(|f| {
            let matted = StubBackend.remove_background(f).unwrap();
            (matted.content_hash()[0] % 8 != 0) == wants_bag
        })
        .unwrap()
}

struct Garbled;

impl ModelBackend for Garbled {
    fn detect(&self, f: &CapturedFrame, q: &str) -> BackendResult<Vec<DetectionBox>> {
        StubBackend.detect(f, q)
    }
    fn segment(&self, f: &CapturedFrame, b: &DetectionBox) -> BackendResult<MaskBitmap> {
        StubBackend.segment(f, b)
    }
    fn remove_background(&self, f: &CapturedFrame) -> BackendResult<CapturedFrame> {
        StubBackend.remove_background(f)
    }
    fn infer_persona_raw(&self, _f: &CapturedFrame) -> BackendResult<String> {
        Ok("I'd rather not say {".into())
    }
    fn stylize(&self, f: &CapturedFrame) -> BackendResult<CapturedFrame> {
        StubBackend.stylize(f)
    }
    fn probe(&self, _c: Capability) -> bool {
        true
    }
}

#[test]
fn stub_run_is_ok_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let frame = portrait(true);
    let cfg = PipelineConfig {
        seed: 7,
        ..PipelineConfig::default()
    };
    let cat = catalog();
    let a_store = RunStore::new(dir.path().join("a"));
    let b_store = RunStore::new(dir.path().join("b"));
    let a = run_pipeline(&frame, &cfg, &StubBackend, &cat, &VirtualClock::new(0), &a_store).unwrap();
    let b = run_pipeline(&frame, &cfg, &StubBackend, &cat, &VirtualClock::new(0), &b_store).unwrap();
    assert_eq!(a.status, RunStatus::Ok, "{:?}", a.degradations);
    assert_eq!(a, b);
    assert_eq!(a_store.load_bytes(&a.run_id).unwrap(), b_store.load_bytes(&b.run_id).unwrap());
    assert_eq!(a_store.composite_png(&a.run_id).unwrap(), b_store.composite_png(&b.run_id).unwrap());
    assert!(a.stage_timings.values().all(|&t| t == 0));
    assert!(!a.plan.placements.is_empty());
    assert!(a.keyword_events.len() >= 3);
    assert!(a.keyword_events.iter().all(|e| e.offset_ms <= cfg.processing_window_ms));
    assert!(a.keyword_events.windows(2).all(|w| w[0].offset_ms <= w[1].offset_ms));
    let panel: Vec<_> = a.panel_meta.iter().map(|p| p.item_id.clone()).collect();
    let assigned: Vec<_> = a.assignments.iter().map(|x| x.item_id.clone()).collect();
    assert_eq!(panel, assigned);
    for key in ["input", "styled", "composite", "record"] {
        assert!(a_store.run_dir(&a.run_id).join(&a.output_refs[key]).is_file(), "{key}");
    }
}

#[test]
fn placed_plan_verifies_against_region() {
    let frame = portrait(true);
    let dir = tempfile::tempdir().unwrap();
    let rec = run_pipeline(&frame, &PipelineConfig::default(), &StubBackend, &catalog(), &VirtualClock::new(0), &RunStore::new(dir.path())).unwrap();
    let matted = StubBackend.remove_background(&frame).unwrap();
    let bag = StubBackend.detect(&matted, "bag").unwrap().remove(0);
    let mask = StubBackend.segment(&matted, &bag).unwrap();
    let region = airays_core::geometry::main_region(&mask, airays_core::geometry::default_margin(&mask)).unwrap();
    assert!(verify_plan(&rec.plan, &region));
    let placed: BTreeSet<_> = rec.plan.placements.iter().map(|p| p.item_id.as_str()).collect();
    assert!(rec.plan.dropped.iter().all(|d| !placed.contains(d.as_str())));
}

#[test]
fn no_bag_degrades_to_panel_only() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_pipeline(&portrait(false), &PipelineConfig::default(), &StubBackend, &catalog(), &VirtualClock::new(0), &RunStore::new(dir.path())).unwrap();
    assert_eq!(rec.status, RunStatus::Degraded);
    assert!(rec.plan.placements.is_empty());
    assert!(rec.detection.is_none());
    assert_eq!(rec.panel_meta.len(), rec.assignments.len());
    assert!(rec.panel_meta.len() >= 3);
    assert!(rec.degradations.iter().any(|d| d.starts_with("no_bag")));
}

#[test]
fn garbled_inference_uses_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_pipeline(&portrait(true), &PipelineConfig::default(), &Garbled, &catalog(), &VirtualClock::new(0), &RunStore::new(dir.path())).unwrap();
    assert_eq!(rec.status, RunStatus::Degraded);
    assert!(is_fallback(&rec.persona));
    assert_eq!(rec.assignments.len(), 3);
    assert!(rec.assignments.iter().all(|a| a.rationale == FALLBACK_RATIONALE));
    assert!(rec.keyword_events.iter().all(|e| e.stage != KeywordStage::Inference));
}

#[test]
fn blank_frame_fails_but_is_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let frame = CapturedFrame::filled(32, 32, [9, 9, 9, 255]).unwrap();
    let rec = run_pipeline(&frame, &PipelineConfig::default(), &StubBackend, &catalog(), &VirtualClock::new(0), &store).unwrap();
    assert_eq!(rec.status, RunStatus::Failed);
    assert!(rec.error_detail.as_deref().unwrap().starts_with("matting"));
    assert_eq!(store.load(&rec.run_id).unwrap(), rec);
    assert!(store.run_dir(&rec.run_id).join("input.png").is_file());
}

#[test]
fn store_round_trip_ids_and_delete() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let frame = portrait(true);
    let cfg = PipelineConfig::default();
    let cat = catalog();
    let a = run_pipeline(&frame, &cfg, &StubBackend, &cat, &VirtualClock::new(0), &store).unwrap();
    let again = run_pipeline(&frame, &cfg, &StubBackend, &cat, &VirtualClock::new(0), &store).unwrap();
    assert_eq!(again, a);
    assert_eq!(store.list().unwrap(), vec![a.run_id.clone()]);
    // same id inputs, different content
    let smaller = Catalog::from_items("demo", synth::demo_items().into_iter().skip(2).collect()).unwrap();
    let b = run_pipeline(&frame, &cfg, &StubBackend, &smaller, &VirtualClock::new(0), &store).unwrap();
    assert_eq!(b.run_id, format!("{}-2", a.run_id));
    assert_eq!(store.load(&a.run_id).unwrap(), a);
    assert_eq!(store.list().unwrap(), vec![a.run_id.clone(), b.run_id.clone()]);
    assert_eq!(store.load("missing"), Err(PipelineError::NotFound("missing".into())));
    assert_eq!(store.load("../etc"), Err(PipelineError::NotFound("../etc".into())));
    store.delete(&a.run_id).unwrap();
    assert!(matches!(store.load(&a.run_id), Err(PipelineError::NotFound(_))));
    assert!(!store.run_dir(&a.run_id).exists());
    assert!(matches!(store.delete(&a.run_id), Err(PipelineError::NotFound(_))));
}
