//! Audit runs and their report directories, `<out_dir>/<timestamp>/`.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use airays_core::audit::{render_report, run_audit, AuditError, AuditOptions, AuditReport, Axis, Codebook, CorpusManifest, ReportFormat};
use airays_core::backends::ModelBackend;
use serde::{Deserialize, Serialize};

use crate::config::AuditDefaults;

pub const MARKDOWN_FILE: &str = "report.md";
pub const CSV_FILE: &str = "report.csv";
pub const JSON_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRequest {
    pub manifest: PathBuf,
    pub codebook: PathBuf,
    pub axis: Axis,
    #[serde(default)]
    pub ratio_threshold: Option<f64>,
    #[serde(default)]
    pub min_support: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditOutcome {
    pub dir: PathBuf,
    /// False when too many entries were skipped; the report is partial.
    pub complete: bool,
    pub report: AuditReport,
}

/// Fresh timestamped directory under `root`.
fn report_dir(root: &Path) -> std::io::Result<PathBuf> {
    fs::create_dir_all(root)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    for n in 1u32.. {
        let dir = if n == 1 { root.join(&stamp) } else { root.join(format!("{stamp}-{n}")) };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

pub fn write_report(report: &AuditReport, root: &Path) -> std::io::Result<PathBuf> {
    let dir = report_dir(root)?;
    fs::write(dir.join(MARKDOWN_FILE), render_report(report, ReportFormat::Markdown))?;
    fs::write(dir.join(CSV_FILE), render_report(report, ReportFormat::Csv))?;
    fs::write(dir.join(JSON_FILE), serde_json::to_vec_pretty(report).expect("report serializes"))?;
    Ok(dir)
}

/// Run the audit and write its report. An incomplete audit still writes the
/// partial report; other failures write nothing.
pub fn run_and_write(req: &AuditRequest, defaults: &AuditDefaults, backend: &dyn ModelBackend) -> Result<AuditOutcome, String> {
    let manifest = CorpusManifest::load(&req.manifest).map_err(|e| e.to_string())?;
    let codebook = Codebook::load(&req.codebook).map_err(|e| e.to_string())?;
    let opts = AuditOptions {
        ratio_threshold: req.ratio_threshold.unwrap_or(defaults.ratio_threshold),
        min_support: req.min_support.unwrap_or(defaults.min_support),
        max_parallel: defaults.max_parallel,
        ..AuditOptions::default()
    };
    let (report, complete) = match run_audit(&manifest, &codebook, req.axis, backend, opts) {
        Ok(r) => (r, true),
        Err(AuditError::Incomplete { skipped, total, partial }) => {
            log::warn!("audit incomplete: {skipped} of {total} entries skipped");
            (*partial, false)
        }
        Err(e) => return Err(e.to_string()),
    };
    let dir = write_report(&report, &defaults.out_dir).map_err(|e| format!("{}: {e}", defaults.out_dir.display()))?;
    Ok(AuditOutcome { dir, complete, report })
}
