//! One end-to-end run: matting, then persona inference, bag perception and
//! styling side by side, then layout and compositing.

mod store;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::{DetectionBox, ModelBackend};
use crate::catalog::Catalog;
use crate::clock::Clock;
use crate::compositor::{self, PanelEntry, DEFAULT_UPSCALE};
use crate::exec::Exec;
use crate::geometry::{self, AdmissibleRegion};
use crate::layout::{self, LayoutItem, LayoutPlan, LayoutRequest};
use crate::persona::{self, AssignmentPolicy, ItemAssignment, PersonaProfile};
use crate::raster::CapturedFrame;

pub use store::{RunArtifacts, RunStore, COMPOSITE_FILE, INPUT_FILE, RECORD_FILE, STYLED_FILE};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_WINDOW_MS: u64 = 10_000;
pub const DEFAULT_BAG_QUERY: &str = "bag";
pub const DEFAULT_MAX_SCALE_PX_PER_CM: f64 = 40.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("run `{0}` not found")]
    NotFound(String),
    #[error("{0}")]
    Io(String),
    #[error("corrupt run record: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub processing_window_ms: u64,
    pub upscale: f64,
    pub policy: AssignmentPolicy,
    pub bag_query: String,
    pub scale_tolerance: f64,
    pub max_scale_px_per_cm: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            processing_window_ms: DEFAULT_WINDOW_MS,
            upscale: DEFAULT_UPSCALE,
            policy: AssignmentPolicy::default(),
            bag_query: DEFAULT_BAG_QUERY.into(),
            scale_tolerance: layout::DEFAULT_SCALE_TOLERANCE,
            max_scale_px_per_cm: DEFAULT_MAX_SCALE_PX_PER_CM,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeywordStage {
    Inference,
    Perception,
    Expression,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordEvent {
    pub text: String,
    pub stage: KeywordStage,
    pub offset_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Degraded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineRunRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub input_hash: String,
    pub seed: u64,
    pub status: RunStatus,
    pub persona: PersonaProfile,
    pub assignments: Vec<ItemAssignment>,
    pub detection: Option<DetectionBox>,
    pub plan: LayoutPlan,
    pub panel_meta: Vec<PanelEntry>,
    pub keyword_events: Vec<KeywordEvent>,
    pub stage_timings: BTreeMap<String, u64>,
    /// Paths relative to the run directory.
    pub output_refs: BTreeMap<String, String>,
    pub degradations: Vec<String>,
    pub error_detail: Option<String>,
    /// "virtual" when timings came from a virtual clock.
    pub clock: String,
}

/// Deterministic id from the inputs that determine a run's content.
pub fn derive_run_id(input_hash: &str, config: &PipelineConfig, catalog_version: &str) -> String {
    let mut h = Sha256::new();
    h.update(input_hash.as_bytes());
    h.update(config.seed.to_le_bytes());
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(catalog_version.as_bytes());
    format!("r-{}", &hex::encode(h.finalize())[..12])
}

/// Events at seeded uniform offsets in `[0, window_ms]`, ascending. Texts
/// are de-duplicated, first stage wins.
pub fn keyword_events(texts: &[(KeywordStage, String)], seed: u64, input_hash: &[u8; 32], window_ms: u64) -> Vec<KeywordEvent> {
    let mut salt = [0u8; 8];
    salt.copy_from_slice(&input_hash[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ u64::from_le_bytes(salt));
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for (stage, text) in texts {
        if text.is_empty() || seen.contains(text) {
            continue;
        }
        seen.push(text.clone());
        out.push(KeywordEvent {
            text: text.clone(),
            stage: *stage,
            offset_ms: rng.random_range(0..=window_ms),
        });
    }
    out.sort_by_key(|e| e.offset_ms);
    out
}

struct Timer<'a> {
    clock: &'a dyn Clock,
    start: u64,
}

impl<'a> Timer<'a> {
    fn start(clock: &'a dyn Clock) -> Self {
        Self {
            clock,
            start: clock.now_ms(),
        }
    }

    fn ms(&self) -> u64 {
        self.clock.now_ms().saturating_sub(self.start)
    }
}

enum Perception {
    Region(DetectionBox, AdmissibleRegion),
    Degraded(Option<DetectionBox>, String),
}

fn perceive(frame: &CapturedFrame, backends: &dyn ModelBackend, cfg: &PipelineConfig) -> Perception {
    let boxes = match backends.detect(frame, &cfg.bag_query) {
        Ok(b) => b,
        Err(e) => return Perception::Degraded(None, format!("detection: {e}")),
    };
    let Some(bag) = boxes.into_iter().next() else {
        return Perception::Degraded(None, "no_bag: detection returned no box".into());
    };
    let mask = match backends.segment(frame, &bag) {
        Ok(m) => m,
        Err(e) => return Perception::Degraded(Some(bag), format!("segmentation: {e}")),
    };
    let margin = geometry::default_margin(&mask);
    match geometry::main_region_with(&mask, margin, cfg.exec) {
        Ok(r) => Perception::Region(bag, r),
        Err(e) => Perception::Degraded(Some(bag), format!("region: {e}")),
    }
}

fn infer(frame: &CapturedFrame, backends: &dyn ModelBackend) -> (PersonaProfile, Option<String>) {
    let raw = match backends.infer_persona_raw(frame) {
        Ok(r) => r,
        Err(e) => return (persona::fallback_persona(), Some(format!("persona_fallback: {e}"))),
    };
    match persona::parse_persona(&raw) {
        Ok(p) => (p, None),
        Err(e) => (persona::fallback_persona(), Some(format!("persona_fallback: {e}"))),
    }
}

/// Everything a run produced, before persistence.
struct Outcome {
    record: PipelineRunRecord,
    artifacts: RunArtifacts,
}

pub fn run_pipeline(
    frame: &CapturedFrame,
    cfg: &PipelineConfig,
    backends: &dyn ModelBackend,
    catalog: &Catalog,
    clock: &dyn Clock,
    store: &RunStore,
) -> Result<PipelineRunRecord, PipelineError> {
    let out = execute(frame, cfg, backends, catalog, clock);
    store.persist(out.record, &out.artifacts)
}

fn execute(
    frame: &CapturedFrame,
    cfg: &PipelineConfig,
    backends: &dyn ModelBackend,
    catalog: &Catalog,
    clock: &dyn Clock,
) -> Outcome {
    let hash = frame.content_hash();
    let input_hash = hex::encode(hash);
    let mut record = PipelineRunRecord {
        schema_version: SCHEMA_VERSION,
        run_id: derive_run_id(&input_hash, cfg, catalog.version()),
        input_hash,
        seed: cfg.seed,
        status: RunStatus::Ok,
        persona: persona::fallback_persona(),
        assignments: Vec::new(),
        detection: None,
        plan: LayoutPlan::empty(frame.width(), frame.height(), Vec::new()),
        panel_meta: Vec::new(),
        keyword_events: Vec::new(),
        stage_timings: BTreeMap::new(),
        output_refs: BTreeMap::new(),
        degradations: Vec::new(),
        error_detail: None,
        clock: if clock.is_virtual() { "virtual" } else { "system" }.into(),
    };
    let mut artifacts = RunArtifacts {
        input: Some(frame.clone()),
        ..RunArtifacts::default()
    };
    let fail = |mut record: PipelineRunRecord, artifacts: RunArtifacts, detail: String| {
        log::warn!("run {} failed: {detail}", record.run_id);
        record.status = RunStatus::Failed;
        record.error_detail = Some(detail);
        Outcome { record, artifacts }
    };

    let t = Timer::start(clock);
    let matted = backends.remove_background(frame);
    record.stage_timings.insert("matting".into(), t.ms());
    let matted = match matted {
        Ok(m) => m,
        Err(e) => return fail(record, artifacts, format!("matting: {e}")),
    };

    let ((profile, persona_note, t_inf), (perception, t_per), (styled, t_sty)) = std::thread::scope(|s| {
        let inference = s.spawn(|| {
            let t = Timer::start(clock);
            let (p, note) = infer(&matted, backends);
            (p, note, t.ms())
        });
        let percept = s.spawn(|| {
            let t = Timer::start(clock);
            let p = perceive(&matted, backends, cfg);
            (p, t.ms())
        });
        let t = Timer::start(clock);
        let styled = backends.stylize(&matted);
        let t_sty = t.ms();
        (
            inference.join().expect("inference thread"),
            percept.join().expect("perception thread"),
            (styled, t_sty),
        )
    });
    record.stage_timings.insert("inference".into(), t_inf);
    record.stage_timings.insert("perception".into(), t_per);
    record.stage_timings.insert("styling".into(), t_sty);

    let t = Timer::start(clock);
    let assignments = persona::assign_items(&profile, catalog, cfg.policy);
    record.stage_timings.insert("assignment".into(), t.ms());
    record.persona = profile;
    record.assignments = assignments;
    if let Some(n) = persona_note {
        record.degradations.push(n);
    }

    let region = match perception {
        Perception::Region(bag, region) => {
            record.detection = Some(bag);
            Some(region)
        }
        Perception::Degraded(bag, note) => {
            record.detection = bag;
            record.degradations.push(note);
            None
        }
    };

    let styled = match styled {
        Ok(s) => s,
        Err(e) => return fail(record, artifacts, format!("styling: {e}")),
    };

    let t = Timer::start(clock);
    let all_ids: Vec<String> = record.assignments.iter().map(|a| a.item_id.clone()).collect();
    record.plan = match region {
        Some(region) if !record.assignments.is_empty() => {
            let items = record
                .assignments
                .iter()
                .filter_map(|a| {
                    catalog.get(&a.item_id).map(|it| LayoutItem {
                        item_id: it.id.clone(),
                        nominal_w_cm: it.nominal_w_cm,
                        nominal_h_cm: it.nominal_h_cm,
                        priority: a.priority,
                    })
                })
                .collect();
            let mut req = LayoutRequest::new(region, items, cfg.seed, cfg.max_scale_px_per_cm);
            req.scale_tolerance = cfg.scale_tolerance;
            match layout::compute_layout_with(&req, cfg.exec) {
                Ok(plan) => plan,
                Err(e) => {
                    record.degradations.push(format!("layout: {e}"));
                    LayoutPlan::empty(frame.width(), frame.height(), all_ids.clone())
                }
            }
        }
        _ => LayoutPlan::empty(frame.width(), frame.height(), Vec::new()),
    };
    record.stage_timings.insert("layout".into(), t.ms());

    let t = Timer::start(clock);
    let comp = compositor::composite_with(&styled, &record.plan, &all_ids, catalog, cfg.upscale, cfg.exec);
    record.stage_timings.insert("composite".into(), t.ms());
    artifacts.styled = Some(styled);
    let comp = match comp {
        Ok(c) => c,
        Err(e) => return fail(record, artifacts, format!("composite: {e}")),
    };
    record.panel_meta = comp.panel_meta;
    artifacts.composite = Some(comp.image);

    let mut texts: Vec<(KeywordStage, String)> = record
        .persona
        .keywords()
        .into_iter()
        .map(|k| (KeywordStage::Inference, k.to_string()))
        .collect();
    if let Some(b) = &record.detection {
        texts.push((KeywordStage::Perception, b.label.clone()));
    }
    for a in &record.assignments {
        if let Some(it) = catalog.get(&a.item_id) {
            texts.push((KeywordStage::Expression, it.name.clone()));
        }
    }
    record.keyword_events = keyword_events(&texts, cfg.seed, &hash, cfg.processing_window_ms);

    if !record.degradations.is_empty() {
        record.status = RunStatus::Degraded;
    }
    Outcome { record, artifacts }
}
