//! Run directories: `<root>/<run_id>/{input.png, styled.png, composite.png,
//! record.json}`. A run is staged in a hidden directory and renamed into
//! place, so readers never observe a partial run.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use image::RgbaImage;

use super::{PipelineError, PipelineRunRecord};
use crate::raster::{encode_png, CapturedFrame};

pub const RECORD_FILE: &str = "record.json";
pub const INPUT_FILE: &str = "input.png";
pub const STYLED_FILE: &str = "styled.png";
pub const COMPOSITE_FILE: &str = "composite.png";

static STAGING_SEQ: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub input: Option<CapturedFrame>,
    pub styled: Option<CapturedFrame>,
    pub composite: Option<RgbaImage>,
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

fn io(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn dir_files(dir: &Path) -> Option<Vec<(std::ffi::OsString, Vec<u8>)>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).ok()? {
        let e = e.ok()?;
        out.push((e.file_name(), fs::read(e.path()).ok()?));
    }
    out.sort();
    Some(out)
}

fn same_files(a: &Path, b: &Path) -> bool {
    matches!((dir_files(a), dir_files(b)), (Some(x), Some(y)) if x == y)
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    /// Write a run under `record.run_id`. A byte-identical run already stored
    /// under that id is kept as is. Otherwise a taken id gets `-2`, `-3`, ...
    /// appended. Returns the record as stored.
    pub fn persist(&self, mut record: PipelineRunRecord, artifacts: &RunArtifacts) -> Result<PipelineRunRecord, PipelineError> {
        fs::create_dir_all(&self.root).map_err(|e| io(&self.root, e))?;
        let base = record.run_id.clone();
        let staging = self.root.join(format!(
            ".staging-{}-{}-{}",
            base,
            std::process::id(),
            STAGING_SEQ.fetch_add(1, Ordering::Relaxed)
        ));
        fs::create_dir_all(&staging).map_err(|e| io(&staging, e))?;
        let result = self.fill_and_publish(&mut record, artifacts, &staging, &base);
        if result.is_err() {
            let _ = fs::remove_dir_all(&staging);
        }
        result.map(|()| record)
    }

    fn fill_and_publish(
        &self,
        record: &mut PipelineRunRecord,
        artifacts: &RunArtifacts,
        staging: &Path,
        base: &str,
    ) -> Result<(), PipelineError> {
        record.output_refs.clear();
        let mut write_png = |name: &str, key: &str, img: &RgbaImage| -> Result<(), PipelineError> {
            let bytes = encode_png(img).map_err(|e| io(&staging.join(name), e))?;
            fs::write(staging.join(name), bytes).map_err(|e| io(&staging.join(name), e))?;
            record.output_refs.insert(key.into(), name.into());
            Ok(())
        };
        if let Some(f) = &artifacts.input {
            write_png(INPUT_FILE, "input", &f.to_image())?;
        }
        if let Some(f) = &artifacts.styled {
            write_png(STYLED_FILE, "styled", &f.to_image())?;
        }
        if let Some(img) = &artifacts.composite {
            write_png(COMPOSITE_FILE, "composite", img)?;
        }
        record.output_refs.insert("record".into(), RECORD_FILE.into());

        for n in 1u32.. {
            let id = if n == 1 { base.to_string() } else { format!("{base}-{n}") };
            let target = self.run_dir(&id);
            record.run_id = id;
            let json = serde_json::to_vec_pretty(&*record).expect("record serializes");
            let rec_path = staging.join(RECORD_FILE);
            fs::write(&rec_path, json).map_err(|e| io(&rec_path, e))?;
            if target.exists() {
                if same_files(staging, &target) {
                    let _ = fs::remove_dir_all(staging);
                    return Ok(());
                }
                continue;
            }
            match fs::rename(staging, &target) {
                Ok(()) => return Ok(()),
                // lost a race for this id; try the next
                Err(_) if target.exists() => continue,
                Err(e) => return Err(io(&target, e)),
            }
        }
        unreachable!("id suffixes exhausted")
    }

    pub fn load(&self, run_id: &str) -> Result<PipelineRunRecord, PipelineError> {
        let path = self.record_path(run_id)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::NotFound => return Err(PipelineError::NotFound(run_id.into())),
            Err(e) => return Err(io(&path, e)),
        };
        serde_json::from_str(&text).map_err(|e| PipelineError::Corrupt(format!("{run_id}: {e}")))
    }

    /// Raw record.json bytes, as served.
    pub fn load_bytes(&self, run_id: &str) -> Result<Vec<u8>, PipelineError> {
        self.read_file(run_id, RECORD_FILE)
    }

    pub fn composite_png(&self, run_id: &str) -> Result<Vec<u8>, PipelineError> {
        self.read_file(run_id, COMPOSITE_FILE)
    }

    fn read_file(&self, run_id: &str, name: &str) -> Result<Vec<u8>, PipelineError> {
        if !valid_id(run_id) {
            return Err(PipelineError::NotFound(run_id.into()));
        }
        let path = self.run_dir(run_id).join(name);
        fs::read(&path).map_err(|e| match e.kind() {
            ErrorKind::NotFound => PipelineError::NotFound(run_id.into()),
            _ => io(&path, e),
        })
    }

    fn record_path(&self, run_id: &str) -> Result<PathBuf, PipelineError> {
        if !valid_id(run_id) {
            return Err(PipelineError::NotFound(run_id.into()));
        }
        Ok(self.run_dir(run_id).join(RECORD_FILE))
    }

    /// Remove every artifact of a run.
    pub fn delete(&self, run_id: &str) -> Result<(), PipelineError> {
        let path = self.record_path(run_id)?;
        let dir = path.parent().expect("run dir");
        if !path.exists() {
            return Err(PipelineError::NotFound(run_id.into()));
        }
        fs::remove_dir_all(dir).map_err(|e| io(dir, e))
    }

    /// Stored run ids, sorted.
    pub fn list(&self) -> Result<Vec<String>, PipelineError> {
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io(&self.root, e)),
        };
        let mut ids: Vec<String> = entries
            .filter_map(Result::ok)
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| valid_id(n) && self.run_dir(n).join(RECORD_FILE).exists())
            .collect();
        ids.sort();
        Ok(ids)
    }
}
