//! Service configuration: a JSON file, named by `--config` or
//! `AIRAYS_CONFIG`. Every field has a default; unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use airays_core::backends::{BackendEndpointConfig, BackendMode};
use airays_core::installation::{Timings, DEFAULT_PRESENCE_THRESHOLD};
use airays_core::persona::AssignmentPolicy;
use airays_core::pipeline::{PipelineConfig, DEFAULT_WINDOW_MS};
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "AIRAYS_CONFIG";

/// Endpoint entry checked while parsing, so range errors carry a line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BackendEndpointConfig", into = "BackendEndpointConfig")]
pub struct Endpoint(pub BackendEndpointConfig);

impl TryFrom<BackendEndpointConfig> for Endpoint {
    type Error = String;

    fn try_from(c: BackendEndpointConfig) -> Result<Self, String> {
        c.validate().map(|()| Endpoint(c))
    }
}

impl From<Endpoint> for BackendEndpointConfig {
    fn from(e: Endpoint) -> Self {
        e.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditDefaults {
    pub ratio_threshold: f64,
    pub min_support: usize,
    pub max_parallel: usize,
    pub out_dir: PathBuf,
}

impl Default for AuditDefaults {
    fn default() -> Self {
        Self {
            ratio_threshold: 2.0,
            min_support: 3,
            max_parallel: 4,
            out_dir: "audits".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub listen: String,
    pub backends: Vec<Endpoint>,
    pub catalog_path: PathBuf,
    pub runs_dir: PathBuf,
    pub timings: Timings,
    pub seed: u64,
    pub processing_window_ms: u64,
    pub upscale: f64,
    pub policy: AssignmentPolicy,
    pub presence_threshold: f64,
    /// Consecutive presence-detection outages before the machine faults.
    pub presence_fault_after: u32,
    /// Capturing faults if no frame arrives within this long.
    pub capture_timeout_ms: u64,
    /// Optional directory polled for new PNG frames.
    pub capture_dir: Option<PathBuf>,
    pub capture_poll_ms: u64,
    pub tick_ms: u64,
    /// Drive the state machine from a virtual clock advanced over HTTP.
    pub virtual_clock: bool,
    pub audit: AuditDefaults,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            backends: Vec::new(),
            catalog_path: "assets/catalog".into(),
            runs_dir: "runs".into(),
            timings: Timings::default(),
            seed: 0,
            processing_window_ms: DEFAULT_WINDOW_MS,
            upscale: airays_core::compositor::DEFAULT_UPSCALE,
            policy: AssignmentPolicy::default(),
            presence_threshold: DEFAULT_PRESENCE_THRESHOLD,
            presence_fault_after: 3,
            capture_timeout_ms: 10_000,
            capture_dir: None,
            capture_poll_ms: 250,
            tick_ms: 20,
            virtual_clock: false,
            audit: AuditDefaults::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub source: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{}:{}:{}: {}", self.source, l, c, self.message),
            _ => write!(f, "{}: {}", self.source, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ServiceConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self, ConfigError> {
        let cfg: ServiceConfig = serde_json::from_str(text).map_err(|e| {
            // serde_json appends " at line L column C"; keep only the message
            let full = e.to_string();
            let message = full.rsplit_once(" at line ").map_or(full.clone(), |(m, _)| m.to_string());
            ConfigError {
                source: source.into(),
                line: (e.line() > 0).then_some(e.line()),
                column: (e.line() > 0).then_some(e.column()),
                message,
            }
        })?;
        cfg.validate().map_err(|message| ConfigError {
            source: source.into(),
            line: None,
            column: None,
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            source: path.display().to_string(),
            line: None,
            column: None,
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// `explicit`, else `AIRAYS_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) => Self::load(Path::new(&p)),
                None => Ok(Self::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut seen = Vec::new();
        for e in &self.backends {
            if seen.contains(&e.0.capability) {
                return Err(format!("backends: capability {} listed twice", e.0.capability));
            }
            seen.push(e.0.capability);
        }
        if !(self.presence_threshold > 0.0 && self.presence_threshold <= 1.0) {
            return Err(format!("presence_threshold must be in (0, 1], got {}", self.presence_threshold));
        }
        if !(self.upscale.is_finite() && self.upscale >= 1.0) {
            return Err(format!("upscale must be >= 1, got {}", self.upscale));
        }
        if self.policy.min_items > self.policy.max_items {
            return Err("policy: min_items exceeds max_items".into());
        }
        if self.tick_ms == 0 || self.capture_poll_ms == 0 {
            return Err("tick_ms and capture_poll_ms must be positive".into());
        }
        if !(self.audit.ratio_threshold.is_finite() && self.audit.ratio_threshold > 0.0) {
            return Err(format!("audit.ratio_threshold must be positive, got {}", self.audit.ratio_threshold));
        }
        Ok(())
    }

    pub fn endpoints(&self) -> Vec<BackendEndpointConfig> {
        self.backends.iter().map(|e| e.0.clone()).collect()
    }

    pub fn all_stub(&self) -> bool {
        self.backends.iter().all(|e| e.0.mode == BackendMode::Stub)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            processing_window_ms: self.processing_window_ms,
            upscale: self.upscale,
            policy: self.policy,
            ..PipelineConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_defaults() {
        assert_eq!(ServiceConfig::parse("{}", "x").unwrap(), ServiceConfig::default());
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let err = ServiceConfig::parse("{\n  \"seed\": 1,\n  \"sed\": 2\n}", "c.json").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert!(err.message.contains("unknown field `sed`"), "{}", err.message);
        assert!(err.to_string().starts_with("c.json:3:"));
    }

    #[test]
    fn nested_unknown_key_and_bad_endpoint() {
        let err = ServiceConfig::parse("{\"timings\": {\n\"reveal\": 1}}", "c").unwrap_err();
        assert_eq!(err.line, Some(2));
        let text = "{\"backends\": [\n {\"capability\": \"detection\", \"mode\": \"remote\",\n  \"base_url\": \"http://h\", \"timeout_ms\": 50}\n]}";
        let err = ServiceConfig::parse(text, "c").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert!(err.message.contains("timeout_ms must be >= 100"), "{}", err.message);
    }

    #[test]
    fn semantic_checks() {
        assert!(ServiceConfig::parse("{\"presence_threshold\": 0}", "c").is_err());
        let dup = "{\"backends\": [{\"capability\": \"styling\", \"mode\": \"stub\"}, {\"capability\": \"styling\", \"mode\": \"stub\"}]}";
        assert!(ServiceConfig::parse(dup, "c").unwrap_err().message.contains("twice"));
    }
}
