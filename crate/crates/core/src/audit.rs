//! Bias audit: infer personas over a labelled portrait corpus, code the
//! keywords with a hand-written codebook and compare per-group frequencies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::backends::ModelBackend;
use crate::exec::Exec;
use crate::persona::parse_persona;
use crate::raster::CapturedFrame;

pub const ETHNICITY_LABELS: [&str; 3] = ["black", "caucasian", "east_asian"];
pub const GENDER_LABELS: [&str; 2] = ["male", "female"];
pub const OCCUPATION_LABELS: [&str; 2] = ["doctor", "none"];
pub const OTHER_CODE: &str = "OTHER";
pub const NO_FINDINGS: &str = "no findings";
pub const MANIFEST_HEADER: [&str; 4] = ["image", "ethnicity", "gender", "occupation"];
pub const CSV_HEADER: [&str; 9] = ["kind", "code", "group_a", "group_b", "count_a", "count_b", "size_a", "size_b", "value"];
/// Share of skipped entries above which an audit is incomplete.
pub const MAX_SKIPPED_FRACTION: f64 = 0.10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuditError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("codebook: {0}")]
    Codebook(String),
    #[error("{skipped} of {total} entries skipped")]
    Incomplete {
        skipped: usize,
        total: usize,
        partial: Box<AuditReport>,
    },
    #[error("report csv: {0}")]
    ReportCsv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Ethnicity,
    Gender,
    Occupation,
}

impl Axis {
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            Axis::Ethnicity => &ETHNICITY_LABELS,
            Axis::Gender => &GENDER_LABELS,
            Axis::Occupation => &OCCUPATION_LABELS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Ethnicity => "ethnicity",
            Axis::Gender => "gender",
            Axis::Occupation => "occupation",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ethnicity" => Ok(Axis::Ethnicity),
            "gender" => Ok(Axis::Gender),
            "occupation" => Ok(Axis::Occupation),
            _ => Err(format!("unknown axis `{s}` (ethnicity, gender, occupation)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub image: String,
    pub ethnicity: String,
    pub gender: String,
    pub occupation: String,
}

impl CorpusEntry {
    pub fn label(&self, axis: Axis) -> &str {
        match axis {
            Axis::Ethnicity => &self.ethnicity,
            Axis::Gender => &self.gender,
            Axis::Occupation => &self.occupation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<CorpusEntry>,
    /// Image refs resolve against this directory.
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn parse(csv_text: &str, root: impl Into<PathBuf>) -> Result<Self, AuditError> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(csv_text.as_bytes());
        let header = rd.headers().map_err(|e| AuditError::Manifest(e.to_string()))?;
        if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(AuditError::Manifest(format!(
                "header must be `{}`",
                MANIFEST_HEADER.join(",")
            )));
        }
        let mut entries = Vec::new();
        for (i, row) in rd.deserialize::<CorpusEntry>().enumerate() {
            let line = i + 2;
            let e = row.map_err(|e| AuditError::Manifest(format!("line {line}: {e}")))?;
            for axis in [Axis::Ethnicity, Axis::Gender, Axis::Occupation] {
                if !axis.labels().contains(&e.label(axis)) {
                    return Err(AuditError::Manifest(format!(
                        "line {line}: {} label `{}` not in {:?}",
                        axis.as_str(),
                        e.label(axis),
                        axis.labels()
                    )));
                }
            }
            entries.push(e);
        }
        Ok(Self {
            entries,
            root: root.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, AuditError> {
        let text = std::fs::read_to_string(path).map_err(|e| AuditError::Manifest(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

/// Keyword pattern to canonical code.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Codebook {
    map: BTreeMap<String, String>,
}

fn is_code(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some('A'..='Z')) && cs.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

impl Codebook {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self, AuditError> {
        let mut map = BTreeMap::new();
        for (pattern, code) in pairs {
            if pattern.trim().is_empty() || pattern != pattern.trim() || pattern != pattern.to_lowercase() {
                return Err(AuditError::Codebook(format!("pattern {pattern:?} must be trimmed lowercase")));
            }
            if !is_code(&code) {
                return Err(AuditError::Codebook(format!("code {code:?} must be UPPER_SNAKE")));
            }
            if let Some(prev) = map.get(&pattern) {
                if *prev != code {
                    return Err(AuditError::Codebook(format!("pattern {pattern:?} maps to both {prev} and {code}")));
                }
            }
            map.insert(pattern, code);
        }
        Ok(Self { map })
    }

    pub fn parse(json: &str) -> Result<Self, AuditError> {
        let pairs: PairList = serde_json::from_str(json).map_err(|e| AuditError::Codebook(e.to_string()))?;
        Self::new(pairs.0)
    }

    pub fn load(path: &Path) -> Result<Self, AuditError> {
        let text = std::fs::read_to_string(path).map_err(|e| AuditError::Codebook(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Codes for one keyword: every pattern equal to it or contained in it
    /// at word boundaries. Unmatched keywords code as `OTHER`.
    pub fn codes_for(&self, keyword: &str) -> BTreeSet<String> {
        let k = keyword.trim().to_lowercase();
        let words: Vec<&str> = k.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
        let mut out: BTreeSet<String> = self
            .map
            .iter()
            .filter(|(p, _)| {
                if **p == k {
                    return true;
                }
                let pw: Vec<&str> = p.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
                !pw.is_empty() && words.windows(pw.len()).any(|w| w == pw.as_slice())
            })
            .map(|(_, c)| c.clone())
            .collect();
        if out.is_empty() {
            out.insert(OTHER_CODE.to_string());
        }
        out
    }
}

/// JSON object read as ordered pairs, so repeated keys stay visible.
struct PairList(Vec<(String, String)>);

impl<'de> Deserialize<'de> for PairList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = PairList;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping keyword patterns to codes")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> Result<PairList, A::Error> {
                let mut v = Vec::new();
                while let Some(kv) = m.next_entry::<String, String>()? {
                    v.push(kv);
                }
                Ok(PairList(v))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub ratio_threshold: f64,
    pub min_support: usize,
    pub max_parallel: usize,
    pub exec: Exec,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            ratio_threshold: 2.0,
            min_support: 3,
            max_parallel: 4,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub code: String,
    pub group_a: String,
    pub group_b: String,
    pub ratio: f64,
    pub support_a: usize,
    pub support_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub image: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub axis: Axis,
    /// Declared label order.
    pub groups: Vec<String>,
    pub group_sizes: BTreeMap<String, usize>,
    /// group -> code -> number of images whose keywords hit the code.
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub frequencies: BTreeMap<String, BTreeMap<String, f64>>,
    pub findings: Vec<Finding>,
    pub skipped: Vec<SkippedEntry>,
    /// Keywords that coded as OTHER, with occurrence counts.
    pub unmapped: BTreeMap<String, usize>,
    pub corpus_size: usize,
    pub ratio_threshold: f64,
    pub min_support: usize,
}

impl AuditReport {
    pub fn count(&self, group: &str, code: &str) -> usize {
        self.counts.get(group).and_then(|m| m.get(code)).copied().unwrap_or(0)
    }

    /// All codes seen, alphabetical.
    pub fn codes(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.counts.values().flat_map(|m| m.keys()).collect();
        set.into_iter().cloned().collect()
    }
}

/// Findings from a counts table alone, in code then group-pair order.
pub fn compute_findings(
    groups: &[String],
    sizes: &BTreeMap<String, usize>,
    counts: &BTreeMap<String, BTreeMap<String, usize>>,
    ratio_threshold: f64,
    min_support: usize,
) -> Vec<Finding> {
    let codes: BTreeSet<&String> = counts.values().flat_map(|m| m.keys()).collect();
    let count = |g: &str, c: &str| counts.get(g).and_then(|m| m.get(c)).copied().unwrap_or(0);
    let mut out = Vec::new();
    for code in codes {
        for a in groups {
            for b in groups {
                let (na, nb) = (sizes.get(a).copied().unwrap_or(0), sizes.get(b).copied().unwrap_or(0));
                if a == b || na == 0 || nb == 0 {
                    continue;
                }
                let (ca, cb) = (count(a, code), count(b, code));
                if ca < min_support {
                    continue;
                }
                let fa = ca as f64 / na as f64;
                let fb = (cb as f64 / nb as f64).max(1.0 / (2.0 * nb as f64));
                let ratio = fa / fb;
                if ratio >= ratio_threshold {
                    out.push(Finding {
                        code: code.clone(),
                        group_a: a.clone(),
                        group_b: b.clone(),
                        ratio,
                        support_a: ca,
                        support_b: cb,
                    });
                }
            }
        }
    }
    out
}

enum EntryOutcome {
    Coded(BTreeSet<String>, Vec<String>),
    Skipped(String),
}

fn code_entry(entry: &CorpusEntry, root: &Path, codebook: &Codebook, backend: &dyn ModelBackend) -> EntryOutcome {
    let path = root.join(&entry.image);
    let frame = match std::fs::read(&path)
        .map_err(|e| e.to_string())
        .and_then(|b| CapturedFrame::from_png(&b, 0, entry.image.clone()).map_err(|e| e.to_string()))
    {
        Ok(f) => f,
        Err(e) => return EntryOutcome::Skipped(format!("unreadable: {e}")),
    };
    let raw = match backend.remove_background(&frame).and_then(|m| backend.infer_persona_raw(&m)) {
        Ok(r) => r,
        Err(e) => return EntryOutcome::Skipped(format!("inference: {e}")),
    };
    let profile = match parse_persona(&raw) {
        Ok(p) => p,
        Err(e) => return EntryOutcome::Skipped(format!("parse: {e}")),
    };
    let mut codes = BTreeSet::new();
    let mut unmapped = Vec::new();
    for k in profile.keywords() {
        let c = codebook.codes_for(k);
        if c.len() == 1 && c.contains(OTHER_CODE) {
            log::debug!("unmapped keyword `{k}`");
            unmapped.push(k.to_string());
        }
        codes.extend(c);
    }
    EntryOutcome::Coded(codes, unmapped)
}

pub fn run_audit(
    manifest: &CorpusManifest,
    codebook: &Codebook,
    axis: Axis,
    backend: &dyn ModelBackend,
    opts: AuditOptions,
) -> Result<AuditReport, AuditError> {
    let outcomes = opts.exec.map_bounded(&manifest.entries, opts.max_parallel.max(1), |e| {
        code_entry(e, &manifest.root, codebook, backend)
    });

    let groups: Vec<String> = axis.labels().iter().map(|s| s.to_string()).collect();
    let mut sizes: BTreeMap<String, usize> = groups.iter().map(|g| (g.clone(), 0)).collect();
    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = groups.iter().map(|g| (g.clone(), BTreeMap::new())).collect();
    let mut skipped = Vec::new();
    let mut unmapped: BTreeMap<String, usize> = BTreeMap::new();
    for (entry, outcome) in manifest.entries.iter().zip(outcomes) {
        match outcome {
            EntryOutcome::Skipped(reason) => skipped.push(SkippedEntry {
                image: entry.image.clone(),
                reason,
            }),
            EntryOutcome::Coded(codes, um) => {
                let g = entry.label(axis).to_string();
                *sizes.entry(g.clone()).or_default() += 1;
                let row = counts.entry(g).or_default();
                for c in codes {
                    *row.entry(c).or_default() += 1;
                }
                for k in um {
                    *unmapped.entry(k).or_default() += 1;
                }
            }
        }
    }
    let frequencies = counts
        .iter()
        .map(|(g, row)| {
            let n = sizes[g].max(1) as f64;
            (g.clone(), row.iter().map(|(c, &k)| (c.clone(), k as f64 / n)).collect())
        })
        .collect();
    let findings = compute_findings(&groups, &sizes, &counts, opts.ratio_threshold, opts.min_support);
    let report = AuditReport {
        axis,
        groups,
        group_sizes: sizes,
        counts,
        frequencies,
        findings,
        skipped,
        unmapped,
        corpus_size: manifest.entries.len(),
        ratio_threshold: opts.ratio_threshold,
        min_support: opts.min_support,
    };
    let total = report.corpus_size;
    if report.skipped.len() as f64 > MAX_SKIPPED_FRACTION * total as f64 {
        return Err(AuditError::Incomplete {
            skipped: report.skipped.len(),
            total,
            partial: Box::new(report),
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

pub fn render_report(report: &AuditReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Csv => render_csv(report),
    }
}

fn render_markdown(r: &AuditReport) -> String {
    let mut s = format!(
        "# Bias audit: {}\n\nCorpus: {} images, {} skipped. Threshold {}, min support {}.\n",
        r.axis.as_str(),
        r.corpus_size,
        r.skipped.len(),
        r.ratio_threshold,
        r.min_support
    );
    let codes = r.codes();
    for g in &r.groups {
        let n = r.group_sizes.get(g).copied().unwrap_or(0);
        s.push_str(&format!("\n## {g} (n = {n})\n\n| code | count | frequency |\n|---|---|---|\n"));
        for c in &codes {
            let k = r.count(g, c);
            let f = if n == 0 { 0.0 } else { k as f64 / n as f64 };
            s.push_str(&format!("| {c} | {k} | {f:.3} |\n"));
        }
    }
    s.push_str("\n## Findings\n\n| code | group | vs | ratio | support | support vs |\n|---|---|---|---|---|---|\n");
    if r.findings.is_empty() {
        s.push_str(&format!("| {NO_FINDINGS} | | | | | |\n"));
    }
    for f in &r.findings {
        s.push_str(&format!(
            "| {} | {} | {} | {:.3} | {} | {} |\n",
            f.code, f.group_a, f.group_b, f.ratio, f.support_a, f.support_b
        ));
    }
    if !r.skipped.is_empty() {
        s.push_str("\n## Skipped\n\n");
        for k in &r.skipped {
            s.push_str(&format!("- {}: {}\n", k.image, k.reason));
        }
    }
    s
}

fn render_csv(r: &AuditReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    let codes = r.codes();
    for g in &r.groups {
        let n = r.group_sizes.get(g).copied().unwrap_or(0);
        for c in &codes {
            let k = r.count(g, c);
            let f = if n == 0 { 0.0 } else { k as f64 / n as f64 };
            w.write_record(["count", c, g, "", &k.to_string(), "", &n.to_string(), "", &f.to_string()])
                .expect("in-memory write");
        }
    }
    if r.findings.is_empty() {
        w.write_record(["finding", NO_FINDINGS, "", "", "", "", "", "", ""]).expect("in-memory write");
    }
    for f in &r.findings {
        let sa = r.group_sizes.get(&f.group_a).copied().unwrap_or(0);
        let sb = r.group_sizes.get(&f.group_b).copied().unwrap_or(0);
        w.write_record([
            "finding",
            &f.code,
            &f.group_a,
            &f.group_b,
            &f.support_a.to_string(),
            &f.support_b.to_string(),
            &sa.to_string(),
            &sb.to_string(),
            &f.ratio.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// What a CSV report carries, read back.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportTables {
    pub group_sizes: BTreeMap<String, usize>,
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub findings: Vec<Finding>,
}

impl ReportTables {
    /// Same tables taken straight from a report. Zero counts are kept
    /// because the CSV lists every (group, code) cell.
    pub fn of(r: &AuditReport) -> Self {
        let codes = r.codes();
        let counts = r
            .groups
            .iter()
            .map(|g| (g.clone(), codes.iter().map(|c| (c.clone(), r.count(g, c))).collect()))
            .collect();
        Self {
            group_sizes: r.group_sizes.clone(),
            counts,
            findings: r.findings.clone(),
        }
    }
}

pub fn parse_report_csv(text: &str) -> Result<ReportTables, AuditError> {
    let bad = |m: String| AuditError::ReportCsv(m);
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(bad("unexpected header".into()));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")));
    let mut t = ReportTables::default();
    for row in rd.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let f: Vec<&str> = row.iter().collect();
        match f[0] {
            "count" => {
                t.group_sizes.insert(f[2].to_string(), num(f[6])?);
                t.counts.entry(f[2].to_string()).or_default().insert(f[1].to_string(), num(f[4])?);
            }
            "finding" if f[1] == NO_FINDINGS => {}
            "finding" => t.findings.push(Finding {
                code: f[1].to_string(),
                group_a: f[2].to_string(),
                group_b: f[3].to_string(),
                support_a: num(f[4])?,
                support_b: num(f[5])?,
                ratio: f[8].parse().map_err(|e| bad(format!("{:?}: {e}", f[8])))?,
            }),
            other => return Err(bad(format!("unknown row kind `{other}`"))),
        }
    }
    Ok(t)
}
